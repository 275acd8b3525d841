/* Copyright 2026 The smokedet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef SMOKEDET_RNG_HPP_
#define SMOKEDET_RNG_HPP_

#include <cstdint>
#include <vector>

namespace smokedet {

/// Counter-based splitmix64 generator keyed by (seed, stream). Sequences are
/// fixed by integer arithmetic only, so they match on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent generator for sub-stream `k` of this stream.
  Rng child(std::uint64_t k) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_;
};

std::uint64_t mix64(std::uint64_t z);

/// k distinct indices drawn uniformly from [0, n), in draw order.
std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k, Rng& rng);

}  // namespace smokedet

#endif  // SMOKEDET_RNG_HPP_
