// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_IO_HPP
#define EINLIN_IO_HPP

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "einlin/einsum_kernel.hpp"
#include "einlin/structure_space.hpp"

namespace einlin {

nlohmann::json to_json(const ThetaVector& theta);
nlohmann::json to_json(const TaxonomyReport& report);
nlohmann::json to_json(const EinsumSpec& spec);
EinsumSpec spec_from_json(const nlohmann::json& j);

/// Self-describing layer document: spec integers, init and learning-rate
/// metadata, and both factors in declared index order
/// (xa, xab, ya, yab, ab) for A and (xb, xab, yb, yab, ab) for B.
nlohmann::json layer_to_json(const EinsumLayer& layer);

/// Throws ConfigError on a malformed document.
EinsumLayer layer_from_json(const nlohmann::json& j);

void save_layer(const EinsumLayer& layer, const std::filesystem::path& path);
EinsumLayer load_layer(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Parses one JSON document per non-empty line. Throws ConfigError.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace einlin

#endif  // EINLIN_IO_HPP
