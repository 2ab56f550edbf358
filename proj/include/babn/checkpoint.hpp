// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Versioned named-tensor container. On disk it is one JSON document:
//   {"format": "babn-ckpt" | "det-attn", "version": 1, "config": {...},
//    "constants": {"beta", "rho", "sigma"}, "tensors": {name: {"shape", "values"}}}
// Values are written with 17 significant digits, so doubles round-trip exactly.

#pragma once

#include <filesystem>
#include <string>

#include "babn/attention.hpp"
#include "babn/babn_net.hpp"
#include "babn/rng.hpp"

namespace babn {

inline constexpr const char* kBabnFormat = "babn-ckpt";
inline constexpr const char* kDeterministicFormat = "det-attn";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string format = kBabnFormat;
  int version = kCheckpointVersion;
  AttentionConfig config;
  BabnConstants constants;
  NamedTensors tensors;

  /// Format/version known and tensor names and shapes exactly those the
  /// config implies. Throws ConversionError listing missing and extra tensors.
  void validate() const;
};

Checkpoint to_checkpoint(const Model& model);
/// Builds a model holding copies of the checkpoint tensors.
Model model_from_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Deterministic checkpoint -> BABN checkpoint. Shared tensors are copied
/// verbatim; the prior and encoder nets are freshly initialized from `rng`.
Checkpoint convert_checkpoint(const Checkpoint& det, const BabnConstants& constants, RngStream& rng);

const char* to_string(OutputKind k);
const char* to_string(Pooling p);
OutputKind output_kind_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);

}  // namespace babn
