// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/io.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "einlin/errors.hpp"

namespace einlin {

using nlohmann::json;

namespace {
constexpr std::string_view kLayerFormat = "einlin.einsum_layer";
constexpr int kLayerVersion = 1;
}  // namespace

json to_json(const ThetaVector& t) {
  return json{{"theta_xa", t.xa}, {"theta_xb", t.xb}, {"theta_xab", t.xab}, {"theta_ya", t.ya},
              {"theta_yb", t.yb}, {"theta_yab", t.yab}, {"theta_ab", t.ab}};
}

json to_json(const TaxonomyReport& r) {
  return json{{"omega", r.omega}, {"psi", r.psi}, {"nu", r.nu}, {"degenerate", r.degenerate}};
}

json to_json(const EinsumSpec& s) {
  return json{{"xa", s.xa},   {"xb", s.xb},   {"xab", s.xab},   {"ya", s.ya},    {"yb", s.yb},
              {"yab", s.yab}, {"ab", s.ab},   {"d_in", s.d_in}, {"d_out", s.d_out}};
}

EinsumSpec spec_from_json(const json& j) {
  try {
    EinsumSpec s;
    s.xa = j.at("xa").get<std::int64_t>();
    s.xb = j.at("xb").get<std::int64_t>();
    s.xab = j.at("xab").get<std::int64_t>();
    s.ya = j.at("ya").get<std::int64_t>();
    s.yb = j.at("yb").get<std::int64_t>();
    s.yab = j.at("yab").get<std::int64_t>();
    s.ab = j.at("ab").get<std::int64_t>();
    s.d_in = j.at("d_in").get<std::int64_t>();
    s.d_out = j.at("d_out").get<std::int64_t>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed einsum spec: ") + e.what());
  } catch (const InfeasibleFactorization& e) {
    throw ConfigError(std::string("invalid einsum spec: ") + e.what());
  }
}

json layer_to_json(const EinsumLayer& layer) {
  return json{
      {"format", kLayerFormat},
      {"version", kLayerVersion},
      {"spec", to_json(layer.spec())},
      {"init", {{"sigma_a", layer.init_std_a}, {"sigma_b", layer.init_std_b}, {"seed", layer.seed}}},
      {"lr", {{"lr_a", layer.lr_a}, {"lr_b", layer.lr_b}}},
      {"a_order", {"xa", "xab", "ya", "yab", "ab"}},
      {"b_order", {"xb", "xab", "yb", "yab", "ab"}},
      {"a", layer.a_declared()},
      {"b", layer.b_declared()},
      {"block_rms_a", layer.block_rms_a},
      {"block_rms_b", layer.block_rms_b},
  };
}

EinsumLayer layer_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kLayerFormat) {
      throw ConfigError("not an einsum layer document");
    }
    if (j.at("version").get<int>() != kLayerVersion) {
      throw ConfigError("unsupported layer version " + j.at("version").dump());
    }
    EinsumLayer layer(spec_from_json(j.at("spec")));
    layer.set_a_declared(j.at("a").get<std::vector<double>>());
    layer.set_b_declared(j.at("b").get<std::vector<double>>());
    const auto& init = j.at("init");
    layer.init_std_a = init.at("sigma_a").get<double>();
    layer.init_std_b = init.at("sigma_b").get<double>();
    layer.seed = init.value("seed", std::uint64_t{0});
    const auto& lr = j.at("lr");
    layer.lr_a = lr.at("lr_a").get<double>();
    layer.lr_b = lr.at("lr_b").get<double>();
    layer.block_rms_a = j.value("block_rms_a", std::vector<double>{});
    layer.block_rms_b = j.value("block_rms_b", std::vector<double>{});
    if (layer.block_rms_a.size() != static_cast<std::size_t>(layer.a_blocks()) ||
        layer.block_rms_b.size() != static_cast<std::size_t>(layer.b_blocks())) {
      record_block_targets(layer);
    }
    return layer;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed layer document: ") + e.what());
  } catch (const ShapeMismatch& e) {
    throw ConfigError(std::string("layer document: ") + e.what());
  }
}

void save_layer(const EinsumLayer& layer, const std::filesystem::path& path) {
  write_file_atomic(path, layer_to_json(layer).dump() + "\n");
}

EinsumLayer load_layer(const std::filesystem::path& path) {
  try {
    return layer_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  static std::atomic<unsigned> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace einlin
