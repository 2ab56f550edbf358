// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "babn/error.hpp"
#include "json.hpp"

namespace babn {
namespace {

using json = nlohmann::ordered_json;

void write_double(std::string& out, double v) {
  if (!std::isfinite(v)) throw NumericalError("checkpoint: refusing to write non-finite value");
  if (v == 0.0) {
    out += std::signbit(v) ? "-0.0" : "0";
    return;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void write_string(std::string& out, const std::string& s) { out += json(s).dump(); }

std::vector<std::pair<std::string, Shape>> expected_layout(const Checkpoint& c) {
  auto lay = BaseParams::layout(c.config);
  if (c.format == kBabnFormat) {
    const auto extra = BabnParams::layout(c.config);
    lay.insert(lay.end(), extra.begin(), extra.end());
  }
  return lay;
}

template <typename T>
T field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw InputError(where + "." + key + ": missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + "." + key + ": wrong type");
  }
}

}  // namespace

const char* to_string(OutputKind k) { return k == OutputKind::kTagging ? "tagging" : "classify"; }
const char* to_string(Pooling p) { return p == Pooling::kLast ? "last" : "mean"; }

OutputKind output_kind_from_string(const std::string& s) {
  if (s == "tagging") return OutputKind::kTagging;
  if (s == "classify") return OutputKind::kClassify;
  throw InputError("unknown output kind '" + s + "'");
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "last") return Pooling::kLast;
  throw InputError("unknown pooling '" + s + "'");
}

void Checkpoint::validate() const {
  if (format != kBabnFormat && format != kDeterministicFormat) {
    throw ConversionError("unknown checkpoint format '" + format + "'");
  }
  if (version < 1 || version > kCheckpointVersion) {
    throw ConversionError("unsupported checkpoint version " + std::to_string(version));
  }
  config.validate();
  constants.validate();
  std::map<std::string, Shape> want;
  for (auto& [n, s] : expected_layout(*this)) want[n] = s;
  std::set<std::string> seen;
  std::string missing, extra, wrong;
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second) throw ConversionError("duplicate tensor " + name);
    auto it = want.find(name);
    if (it == want.end()) {
      extra += " " + name;
    } else if (it->second != t.shape()) {
      wrong += " " + name + shape_str(t.shape()) + "!=" + shape_str(it->second);
    }
  }
  for (const auto& [name, s] : want) {
    if (!seen.count(name)) missing += " " + name;
  }
  if (!missing.empty() || !extra.empty() || !wrong.empty()) {
    std::string msg = "checkpoint does not match its config;";
    if (!missing.empty()) msg += " missing:" + missing + ";";
    if (!extra.empty()) msg += " extra:" + extra + ";";
    if (!wrong.empty()) msg += " wrong shape:" + wrong + ";";
    throw ConversionError(msg);
  }
}

Checkpoint to_checkpoint(const Model& model) {
  Checkpoint c;
  c.format = model.kind() == ModelKind::kBabn ? kBabnFormat : kDeterministicFormat;
  c.config = model.config();
  c.constants = model.constants();
  for (const auto& [name, t] : model.named_parameters()) c.tensors.push_back({name, t.detach()});
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.validate();
  NamedTensors copies;
  for (const auto& [name, t] : ckpt.tensors) {
    copies.push_back({name, Tensor::parameter(t.shape(), t.values())});
  }
  const bool babn = ckpt.format == kBabnFormat;
  std::optional<BabnParams> extra;
  if (babn) extra = BabnParams::bind(ckpt.config, copies);
  return Model(ckpt.config, babn ? ModelKind::kBabn : ModelKind::kDeterministic, ckpt.constants,
               BaseParams::bind(ckpt.config, copies), std::move(extra));
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out;
  out += "{\n  \"format\": ";
  write_string(out, c.format);
  out += ",\n  \"version\": " + std::to_string(c.version);
  const AttentionConfig& k = c.config;
  out += ",\n  \"config\": {\"d_model\": " + std::to_string(k.d_model) +
         ", \"n_heads\": " + std::to_string(k.n_heads) +
         ", \"n_layers\": " + std::to_string(k.n_layers) +
         ", \"ffn_hidden\": " + std::to_string(k.ffn_hidden) +
         ", \"vocab_size\": " + std::to_string(k.vocab_size) +
         ", \"max_seq_len\": " + std::to_string(k.max_seq_len) +
         ", \"n_classes\": " + std::to_string(k.n_classes) + ", \"output\": \"" +
         to_string(k.output) + "\", \"pooling\": \"" + to_string(k.pooling) + "\"}";
  out += ",\n  \"constants\": {\"beta\": ";
  write_double(out, c.constants.beta);
  out += ", \"rho\": ";
  write_double(out, c.constants.rho);
  out += ", \"sigma\": ";
  write_double(out, c.constants.sigma);
  out += "},\n  \"tensors\": {";
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    const auto& [name, t] = c.tensors[i];
    out += i ? ",\n    " : "\n    ";
    write_string(out, name);
    out += ": {\"shape\": [";
    for (std::size_t d = 0; d < t.rank(); ++d) {
      if (d) out += ", ";
      out += std::to_string(t.shape()[d]);
    }
    out += "], \"values\": [";
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (j) out += ", ";
      write_double(out, t[j]);
    }
    out += "]}";
  }
  out += "\n  }\n}\n";
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  c.format = field<std::string>(j, "format", "checkpoint");
  c.version = field<int>(j, "version", "checkpoint");
  const json cfg = field<json>(j, "config", "checkpoint");
  c.config.d_model = field<std::size_t>(cfg, "d_model", "config");
  c.config.n_heads = field<std::size_t>(cfg, "n_heads", "config");
  c.config.n_layers = field<std::size_t>(cfg, "n_layers", "config");
  c.config.ffn_hidden = field<std::size_t>(cfg, "ffn_hidden", "config");
  c.config.vocab_size = field<std::size_t>(cfg, "vocab_size", "config");
  c.config.max_seq_len = field<std::size_t>(cfg, "max_seq_len", "config");
  c.config.n_classes = field<std::size_t>(cfg, "n_classes", "config");
  c.config.output = output_kind_from_string(field<std::string>(cfg, "output", "config"));
  c.config.pooling = pooling_from_string(field<std::string>(cfg, "pooling", "config"));
  const json cst = field<json>(j, "constants", "checkpoint");
  c.constants.beta = field<double>(cst, "beta", "constants");
  c.constants.rho = field<double>(cst, "rho", "constants");
  c.constants.sigma = field<double>(cst, "sigma", "constants");
  if (!j.contains("tensors")) throw InputError("checkpoint.tensors: missing");
  const json& ts = j["tensors"];
  if (!ts.is_object()) throw InputError("checkpoint.tensors: expected an object");
  for (const auto& [name, t] : ts.items()) {
    const auto shape = field<std::vector<std::size_t>>(t, "shape", "tensors." + name);
    std::vector<double> values;
    if (!t.contains("values")) throw InputError("tensors." + name + ".values: missing");
    const json& vals = t["values"];
    if (!vals.is_array()) throw InputError("tensors." + name + ".values: expected an array");
    values.reserve(vals.size());
    for (const json& v : vals) {
      if (!v.is_number()) throw InputError("tensors." + name + ".values: non-numeric entry");
      values.push_back(v.get<double>());
    }
    if (shape_numel(shape) != values.size()) {
      throw InputError("tensors." + name + ": " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    c.tensors.push_back({name, Tensor::from(shape, std::move(values))});
  }
  c.validate();
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.validate();
  const std::string text = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write checkpoint " + path.string());
  f << text;
  if (!f) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

Checkpoint convert_checkpoint(const Checkpoint& det, const BabnConstants& constants,
                              RngStream& rng) {
  if (det.format != kDeterministicFormat) {
    throw ConversionError("convert expects a '" + std::string(kDeterministicFormat) +
                          "' checkpoint, got '" + det.format + "'");
  }
  det.validate();
  constants.validate();
  Checkpoint out;
  out.format = kBabnFormat;
  out.version = kCheckpointVersion;
  out.config = det.config;
  out.constants = constants;
  for (const auto& [name, t] : det.tensors) out.tensors.push_back({name, t.clone().detach()});
  const BabnParams fresh = BabnParams::init(det.config, rng);
  for (const auto& [name, t] : fresh.named()) out.tensors.push_back({name, t.detach()});
  out.validate();
  return out;
}

}  // namespace babn
