// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/structure_space.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "einlin/errors.hpp"

namespace einlin {
namespace {

bool is_zero(double v) noexcept { return std::abs(v) <= kThetaTolerance; }
bool is_one(double v) noexcept { return std::abs(v - 1.0) <= kThetaTolerance; }
bool is_positive(double v) noexcept { return v > kThetaTolerance; }

std::string_view trim(std::string_view s) noexcept {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_decimal(std::string_view token, std::string_view whole) {
  token = trim(token);
  double value = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || token.empty()) {
    throw ConstraintViolation("cannot parse theta entry '" + std::string(token) + "' in '" +
                              std::string(whole) + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(Structure s) noexcept {
  switch (s) {
    case Structure::kDense: return "dense";
    case Structure::kLowRank: return "low-rank";
    case Structure::kKronecker: return "kronecker";
    case Structure::kTensorTrain: return "tensor-train";
    case Structure::kMonarch: return "monarch";
    case Structure::kBtt: return "btt";
    case Structure::kGeneric: return "generic";
  }
  return "generic";
}

ThetaVector relabel_factors(const ThetaVector& t) noexcept {
  ThetaVector r = t;
  std::swap(r.xa, r.xb);
  std::swap(r.ya, r.yb);
  return r;
}

bool is_canonical(const ThetaVector& t) noexcept {
  return std::min(t.xa, t.yb) >= std::min(t.ya, t.xb) - kThetaTolerance;
}

ThetaVector validate_and_canonicalize(const ThetaVector& raw) {
  auto v = raw.as_array();
  static constexpr std::array<const char*, 7> kNames = {"theta_xa", "theta_xb", "theta_xab",
                                                        "theta_ya", "theta_yb", "theta_yab",
                                                        "theta_ab"};
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ConstraintViolation(std::string(kNames[i]) + " is not finite");
    }
    if (v[i] < -kThetaTolerance || v[i] > 1.0 + kThetaTolerance) {
      throw ConstraintViolation(std::string(kNames[i]) + " = " + std::to_string(v[i]) +
                                " lies outside [0, 1]");
    }
    v[i] = std::clamp(v[i], 0.0, 1.0);
  }
  const double in_sum = v[0] + v[1] + v[2];
  const double out_sum = v[3] + v[4] + v[5];
  if (std::abs(in_sum - 1.0) > kThetaTolerance) {
    throw ConstraintViolation("input exponents theta_xa + theta_xb + theta_xab sum to " +
                              std::to_string(in_sum) + ", expected 1");
  }
  if (std::abs(out_sum - 1.0) > kThetaTolerance) {
    throw ConstraintViolation("output exponents theta_ya + theta_yb + theta_yab sum to " +
                              std::to_string(out_sum) + ", expected 1");
  }
  ThetaVector t = ThetaVector::from_array(v);
  return is_canonical(t) ? t : relabel_factors(t);
}

TaxonomyReport taxonomy(const ThetaVector& t) noexcept {
  TaxonomyReport r;
  const double first_cut = std::min(t.xa, t.yb);
  r.psi = std::min(1.0, 2.0 + t.ab - t.xa - t.yb);
  r.degenerate = t.ab >= first_cut - kThetaTolerance;
  r.nu = std::clamp(1.0 + t.ab - first_cut, 0.0, 1.0);
  r.omega = std::min(t.xa + t.ya, t.xb + t.yb) - first_cut;
  // Exact zeros for patterns that cancel analytically.
  if (std::abs(r.omega) <= kThetaTolerance) r.omega = 0.0;
  return r;
}

Structure recognize(const ThetaVector& t) noexcept {
  if (is_one(t.xab) && is_one(t.yab) && is_zero(t.ab)) return Structure::kDense;
  if (is_one(t.xa) && is_one(t.yb)) return Structure::kLowRank;

  const bool four_way = is_positive(t.xa) && is_positive(t.xb) && is_positive(t.ya) &&
                        is_positive(t.yb) && is_zero(t.xab) && is_zero(t.yab);
  if (four_way) return is_zero(t.ab) ? Structure::kKronecker : Structure::kTensorTrain;

  const bool block = is_positive(t.xa) && is_positive(t.xab) && is_positive(t.yb) &&
                     is_positive(t.yab) && is_zero(t.xb) && is_zero(t.ya);
  if (block) return is_zero(t.ab) ? Structure::kMonarch : Structure::kBtt;

  return Structure::kGeneric;
}

namespace presets {

ThetaVector dense() noexcept { return {0, 0, 1, 0, 0, 1, 0}; }
ThetaVector low_rank(double ab) noexcept { return {1, 0, 0, 0, 1, 0, ab}; }
ThetaVector kronecker() noexcept { return {0.5, 0.5, 0, 0.5, 0.5, 0, 0}; }
ThetaVector tensor_train(double ab) noexcept { return {0.5, 0.5, 0, 0.5, 0.5, 0, ab}; }
ThetaVector monarch() noexcept { return {0.5, 0, 0.5, 0, 0.5, 0.5, 0}; }
ThetaVector btt(double ab) noexcept { return {0.5, 0, 0.5, 0, 0.5, 0.5, ab}; }

}  // namespace presets

ThetaVector parse_theta(std::string_view text) {
  const std::string_view whole = trim(text);
  if (whole.empty()) throw ConstraintViolation("empty theta");

  if (whole.find(',') != std::string_view::npos) {
    std::vector<double> values;
    std::string_view rest = whole;
    while (true) {
      const auto comma = rest.find(',');
      values.push_back(parse_decimal(rest.substr(0, comma), whole));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (values.size() != 7) {
      throw ConstraintViolation("theta needs 7 comma-separated entries, got " +
                                std::to_string(values.size()));
    }
    std::array<double, 7> arr{};
    std::copy(values.begin(), values.end(), arr.begin());
    return validate_and_canonicalize(ThetaVector::from_array(arr));
  }

  std::string_view name = whole;
  std::string_view suffix;
  if (const auto colon = whole.find(':'); colon != std::string_view::npos) {
    name = trim(whole.substr(0, colon));
    suffix = trim(whole.substr(colon + 1));
  }
  auto rank_exponent = [&](double fallback) {
    return suffix.empty() ? fallback : parse_decimal(suffix, whole);
  };
  auto no_suffix = [&](ThetaVector t) {
    if (!suffix.empty()) {
      throw ConstraintViolation("preset '" + std::string(name) + "' takes no ':' suffix");
    }
    return t;
  };

  ThetaVector t;
  if (name == "dense") {
    t = no_suffix(presets::dense());
  } else if (name == "low-rank" || name == "lowrank") {
    t = presets::low_rank(rank_exponent(0.5));
  } else if (name == "kronecker") {
    t = no_suffix(presets::kronecker());
  } else if (name == "tt" || name == "tensor-train") {
    t = presets::tensor_train(rank_exponent(0.25));
  } else if (name == "monarch") {
    t = no_suffix(presets::monarch());
  } else if (name == "btt") {
    t = presets::btt(rank_exponent(0.25));
  } else {
    throw ConstraintViolation("unknown theta preset '" + std::string(whole) + "'");
  }
  return validate_and_canonicalize(t);
}

std::string format_theta(const ThetaVector& t) {
  std::string out;
  const auto v = t.as_array();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v[i]);
    out.append(buf, ptr);
  }
  return out;
}

}  // namespace einlin
