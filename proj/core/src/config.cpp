// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "einlin/errors.hpp"
#include "einlin/io.hpp"

namespace einlin {

using nlohmann::json;

namespace {

const std::set<std::string> kExperimentKeys = {
    "kind",       "family",    "structure",     "moe",       "depth",     "width",
    "batch_size", "steps",     "flops_budget",  "base_lr",   "base_width", "seed",
    "data_seed",  "eval_interval", "eval_size", "precision", "weight_norm", "teacher"};

void reject_unknown(const json& j, const std::set<std::string>& allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

MoeConfig moe_from_json(const json& j) {
  reject_unknown(j, {"variant", "E", "k", "balance_coefficient", "low_rank_theta_ab", "ffn_hidden"},
                 "moe");
  MoeConfig m;
  if (j.contains("variant")) m.variant = parse_moe_variant(j.at("variant").get<std::string>());
  read_opt(j, "E", m.num_experts);
  read_opt(j, "k", m.k);
  read_opt(j, "balance_coefficient", m.balance_coefficient);
  read_opt(j, "low_rank_theta_ab", m.low_rank_theta_ab);
  read_opt(j, "ffn_hidden", m.ffn_hidden);
  if (m.num_experts < 1 || m.k < 1 || m.k > m.num_experts) {
    throw ConfigError("moe needs E >= 1 and 1 <= k <= E");
  }
  if (m.balance_coefficient < 0.0) throw ConfigError("moe balance_coefficient must be >= 0");
  if (m.ffn_hidden < 0) throw ConfigError("moe ffn_hidden must be >= 0");
  return m;
}

TeacherConfig teacher_from_json(const json& j) {
  reject_unknown(j, {"input_dim", "depth", "hidden", "seed"}, "teacher");
  TeacherConfig t;
  read_opt(j, "input_dim", t.input_dim);
  read_opt(j, "depth", t.depth);
  read_opt(j, "hidden", t.hidden);
  read_opt(j, "seed", t.seed);
  if (t.input_dim < 1 || t.depth < 1 || t.hidden < 1) {
    throw ConfigError("teacher needs positive input_dim, depth and hidden");
  }
  return t;
}

StructureSpec structure_from_json(const json& j) {
  StructureSpec s;
  if (j.contains("moe")) {
    s.kind = LayerKind::kMoe;
    s.moe = moe_from_json(j.at("moe"));
    s.text = j.contains("structure") ? j.at("structure").get<std::string>()
                                     : std::string(to_string(s.moe.variant)) + "-moe";
    return s;
  }
  if (!j.contains("structure")) throw ConfigError("config needs 'structure' or 'moe'");
  return parse_structure(j.at("structure").get<std::string>());
}

void validate(const ExperimentConfig& c) {
  if (c.depth < 2) throw ConfigError("depth must be >= 2 (embed and readout)");
  if (c.width < 1) throw ConfigError("width must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.steps < 1) throw ConfigError("steps must be >= 1");
  if (!(c.flops_budget >= 0.0)) throw ConfigError("flops_budget must be >= 0");
  if (!(c.base_lr >= 0.0) || !std::isfinite(c.base_lr)) throw ConfigError("base_lr must be >= 0");
  if (c.base_width < 1) throw ConfigError("base_width must be >= 1");
  if (c.eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (c.eval_size < 1) throw ConfigError("eval_size must be >= 1");
  if (c.precision != "f64") {
    throw ConfigError("precision '" + c.precision + "' is not supported; only f64 is implemented");
  }
  check_family_name(c.family);
}

ExperimentConfig read_experiment_fields(const json& j, bool needs_structure) {
  ExperimentConfig c;
  if (needs_structure) c.structure = structure_from_json(j);
  read_opt(j, "depth", c.depth);
  read_opt(j, "width", c.width);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "steps", c.steps);
  read_opt(j, "flops_budget", c.flops_budget);
  read_opt(j, "base_lr", c.base_lr);
  read_opt(j, "base_width", c.base_width);
  read_opt(j, "seed", c.seed);
  read_opt(j, "data_seed", c.data_seed);
  read_opt(j, "eval_interval", c.eval_interval);
  read_opt(j, "eval_size", c.eval_size);
  read_opt(j, "precision", c.precision);
  read_opt(j, "weight_norm", c.weight_norm);
  if (j.contains("teacher")) c.teacher = teacher_from_json(j.at("teacher"));
  if (j.contains("family")) {
    c.family = j.at("family").get<std::string>();
  } else if (needs_structure) {
    c.family = default_family_name(c.structure);
  }
  return c;
}

}  // namespace

StructureSpec parse_structure(std::string_view text) {
  StructureSpec s;
  s.text = std::string(text);
  if (text == "dense") {
    s.kind = LayerKind::kDense;
    s.theta = presets::dense();
    return s;
  }
  s.kind = LayerKind::kEinsum;
  s.theta = text == "dense-einsum" ? presets::dense() : parse_theta(text);
  return s;
}

ThetaVector representative_theta(const StructureSpec& s) {
  switch (s.kind) {
    case LayerKind::kDense:
      return presets::dense();
    case LayerKind::kEinsum:
      return s.theta;
    case LayerKind::kMoe:
      switch (s.moe.variant) {
        case MoeVariant::kBtt:
          return presets::monarch();
        case MoeVariant::kLowRank:
          return presets::low_rank(s.moe.low_rank_theta_ab);
        case MoeVariant::kDense:
        case MoeVariant::kFfn:
          return presets::dense();
      }
  }
  return presets::dense();
}

std::string default_family_name(const StructureSpec& s) {
  std::string out;
  for (const char ch : s.text) {
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-') {
      out.push_back(ch);
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "run" : out;
}

void check_family_name(std::string_view name) {
  if (name.empty()) throw ConfigError("family name is empty");
  for (const char ch : name) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-')) {
      throw ConfigError("family name '" + std::string(name) +
                        "' may only contain letters, digits, '.' and '-'");
    }
  }
}

ExperimentConfig train_config_from_json(const json& j) {
  try {
    reject_unknown(j, kExperimentKeys, "train config");
    if (j.contains("kind") && j.at("kind") != "train") {
      throw ConfigError("expected kind 'train', got " + j.at("kind").dump());
    }
    ExperimentConfig c = read_experiment_fields(j, true);
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  } catch (const ConstraintViolation& e) {
    throw ConfigError(std::string("train config structure: ") + e.what());
  }
}

SweepConfig sweep_config_from_json(const json& j) {
  try {
    reject_unknown(j, {"kind", "families", "widths", "seeds", "base"}, "sweep config");
    if (j.contains("kind") && j.at("kind") != "sweep") {
      throw ConfigError("expected kind 'sweep', got " + j.at("kind").dump());
    }
    SweepConfig s;
    const json base = j.value("base", json::object());
    auto base_keys = kExperimentKeys;
    base_keys.erase("structure");
    base_keys.erase("moe");
    base_keys.erase("family");
    base_keys.erase("width");
    base_keys.erase("seed");
    reject_unknown(base, base_keys, "sweep base");
    s.base = read_experiment_fields(base, false);
    for (const auto& f : j.at("families")) {
      reject_unknown(f, {"name", "structure", "moe"}, "sweep family");
      SweepFamily fam;
      fam.structure = structure_from_json(f);
      fam.name = f.contains("name") ? f.at("name").get<std::string>()
                                    : default_family_name(fam.structure);
      check_family_name(fam.name);
      s.families.push_back(std::move(fam));
    }
    s.widths = j.at("widths").get<std::vector<std::int64_t>>();
    s.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
    if (s.families.empty() || s.widths.empty() || s.seeds.empty()) {
      throw ConfigError("sweep needs at least one family, width and seed");
    }
    std::set<std::string> names;
    for (const auto& f : s.families) {
      if (!names.insert(f.name).second) throw ConfigError("duplicate sweep family '" + f.name + "'");
    }
    ExperimentConfig probe = s.base;
    probe.family = s.families.front().name;
    for (const auto w : s.widths) {
      probe.width = w;
      validate(probe);
    }
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep config: ") + e.what());
  } catch (const ConstraintViolation& e) {
    throw ConfigError(std::string("sweep config structure: ") + e.what());
  }
}

json to_json(const MoeConfig& m) {
  return json{{"variant", to_string(m.variant)},
              {"E", m.num_experts},
              {"k", m.k},
              {"balance_coefficient", m.balance_coefficient},
              {"low_rank_theta_ab", m.low_rank_theta_ab},
              {"ffn_hidden", m.ffn_hidden}};
}

json to_json(const TeacherConfig& t) {
  return json{{"input_dim", t.input_dim}, {"depth", t.depth}, {"hidden", t.hidden}, {"seed", t.seed}};
}

json to_json(const StructureSpec& s) {
  json j{{"structure", s.text}};
  if (s.kind == LayerKind::kMoe) j["moe"] = to_json(s.moe);
  return j;
}

json to_json(const ExperimentConfig& c) {
  json j = to_json(c.structure);
  j["kind"] = "train";
  j["family"] = c.family;
  j["depth"] = c.depth;
  j["width"] = c.width;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["flops_budget"] = c.flops_budget;
  j["base_lr"] = c.base_lr;
  j["base_width"] = c.base_width;
  j["seed"] = c.seed;
  j["data_seed"] = c.data_seed;
  j["eval_interval"] = c.eval_interval;
  j["eval_size"] = c.eval_size;
  j["precision"] = c.precision;
  j["weight_norm"] = c.weight_norm;
  j["teacher"] = to_json(c.teacher);
  return j;
}

json load_config(const std::filesystem::path& path, std::string_view expected_kind) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("kind")) {
    throw ConfigError(path.string() + ": missing \"kind\" discriminator");
  }
  if (j.at("kind") != expected_kind) {
    throw ConfigError(path.string() + ": expected kind '" + std::string(expected_kind) + "', got " +
                      j.at("kind").dump());
  }
  return j;
}

std::string run_file_name(const ExperimentConfig& c) {
  return c.family + "_" + std::to_string(c.width) + "_" + std::to_string(c.seed) + ".jsonl";
}

}  // namespace einlin
