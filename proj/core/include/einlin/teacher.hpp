// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_TEACHER_HPP
#define EINLIN_TEACHER_HPP

#include <cstdint>
#include <memory>
#include <mutex>
#include <vector>

#include "einlin/dense.hpp"
#include "einlin/matrix.hpp"

namespace einlin {

struct TeacherConfig {
  std::int64_t input_dim = 8;
  int depth = 6;  // linear layers, including the scalar readout
  std::int64_t hidden = 1024;
  std::uint64_t seed = 0;

  friend bool operator==(const TeacherConfig&, const TeacherConfig&) = default;
};

/// Frozen ReLU MLP without biases. Hidden weights are N(0, 2/fan_in), the
/// readout N(0, 1/fan_in), so targets have roughly unit variance.
class Teacher {
 public:
  explicit Teacher(const TeacherConfig& config);

  const TeacherConfig& config() const noexcept { return config_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::int64_t macs_per_example() const noexcept;

  /// Scalar output per row of x; evaluated in row chunks to bound memory.
  Matrix forward(const Matrix& x) const;

 private:
  TeacherConfig config_;
  std::vector<DenseLayer> layers_;
};

struct Batch {
  Matrix inputs;   // batch x input_dim, i.i.d. N(0, 1)
  Matrix targets;  // batch x 1
};

/// Deterministic in (teacher, batch, seed, counter).
Batch gen_batch(const Teacher& teacher, std::int64_t batch, std::uint64_t seed,
                std::uint64_t counter);

/// Held-out set drawn from a stream disjoint from every training counter.
Batch eval_set(const Teacher& teacher, std::int64_t size, std::uint64_t seed);

/// Memoizes gen_batch for counters below `capacity`; later counters are
/// generated on demand. Safe for concurrent readers.
class BatchPool {
 public:
  BatchPool(std::shared_ptr<const Teacher> teacher, std::int64_t batch, std::uint64_t seed,
            std::size_t capacity);

  std::shared_ptr<const Batch> get(std::uint64_t counter);

  const Teacher& teacher() const noexcept { return *teacher_; }
  std::int64_t batch() const noexcept { return batch_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::shared_ptr<const Teacher> teacher_;
  std::int64_t batch_;
  std::uint64_t seed_;
  std::mutex mu_;
  std::vector<std::shared_ptr<const Batch>> slots_;
};

}  // namespace einlin

#endif  // EINLIN_TEACHER_HPP
