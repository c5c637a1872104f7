// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "einlin/errors.hpp"
#include "einlin/rng.hpp"

namespace einlin {
namespace {

constexpr std::size_t kChunkRows = 2048;
constexpr std::uint64_t kEvalStream = 0x65766131ULL;

Batch make_batch(const Teacher& teacher, std::int64_t size, std::uint64_t stream_seed) {
  if (size < 1) throw ConfigError("batch size must be positive");
  Batch b;
  b.inputs = Matrix(static_cast<std::size_t>(size),
                    static_cast<std::size_t>(teacher.config().input_dim));
  std::mt19937_64 gen(stream_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : b.inputs.flat()) v = normal(gen);
  b.targets = teacher.forward(b.inputs);
  return b;
}

}  // namespace

Teacher::Teacher(const TeacherConfig& config) : config_(config) {
  if (config.input_dim < 1 || config.depth < 1 || config.hidden < 1) {
    throw ConfigError("teacher needs positive input_dim, depth and hidden");
  }
  std::int64_t fan_in = config.input_dim;
  for (int l = 0; l < config.depth; ++l) {
    const bool last = l + 1 == config.depth;
    const std::int64_t fan_out = last ? 1 : config.hidden;
    const double gain = last ? 1.0 : 2.0;
    layers_.push_back(init_dense(fan_in, fan_out, std::sqrt(gain / static_cast<double>(fan_in)),
                                 false, derive_seed(config.seed, static_cast<std::uint64_t>(l))));
    fan_in = fan_out;
  }
}

std::int64_t Teacher::macs_per_example() const noexcept {
  std::int64_t n = 0;
  for (const auto& l : layers_) n += l.fan_in * l.fan_out;
  return n;
}

Matrix Teacher::forward(const Matrix& x) const {
  if (static_cast<std::int64_t>(x.cols()) != config_.input_dim) {
    throw ShapeMismatch("teacher input width mismatch");
  }
  Matrix out(x.rows(), 1);
  for (std::size_t start = 0; start < x.rows(); start += kChunkRows) {
    const std::size_t n = std::min(kChunkRows, x.rows() - start);
    Matrix h(n, x.cols());
    std::copy_n(x.row(start).data(), n * x.cols(), h.data());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = dense_forward(layers_[l], h);
      if (l + 1 < layers_.size()) {
        for (double& v : h.flat()) v = v > 0.0 ? v : 0.0;
      }
    }
    std::copy_n(h.data(), n, out.row(start).data());
  }
  return out;
}

Batch gen_batch(const Teacher& teacher, std::int64_t batch, std::uint64_t seed,
                std::uint64_t counter) {
  return make_batch(teacher, batch, derive_seed(seed, counter));
}

Batch eval_set(const Teacher& teacher, std::int64_t size, std::uint64_t seed) {
  return make_batch(teacher, size, derive_seed(splitmix64(seed ^ kEvalStream), 0));
}

BatchPool::BatchPool(std::shared_ptr<const Teacher> teacher, std::int64_t batch,
                     std::uint64_t seed, std::size_t capacity)
    : teacher_(std::move(teacher)), batch_(batch), seed_(seed), slots_(capacity) {
  if (!teacher_) throw ConfigError("batch pool needs a teacher");
}

std::shared_ptr<const Batch> BatchPool::get(std::uint64_t counter) {
  if (counter < slots_.size()) {
    std::lock_guard<std::mutex> lock(mu_);
    if (slots_[counter]) return slots_[counter];
  }
  auto fresh = std::make_shared<const Batch>(gen_batch(*teacher_, batch_, seed_, counter));
  if (counter < slots_.size()) {
    std::lock_guard<std::mutex> lock(mu_);
    // A concurrent reader may have filled the slot; both copies are identical.
    if (!slots_[counter]) slots_[counter] = fresh;
    return slots_[counter];
  }
  return fresh;
}

}  // namespace einlin
