#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "incfsl/core_types.hpp"

namespace incfsl {

enum class EvalSplit { Train, Val, Test };

struct SamplerConfig {
  EpisodeSpec spec;  // per-episode template
  // base:novel proportion for the unlabeled pool of semi-supervised test
  // episodes; the template's unlabeled counts supply the total.
  std::pair<int, int> unlabeled_ratio{1, 1};
  uint64_t stream_seed = 0;
  EvalSplit eval_split = EvalSplit::Test;  // used by sample_test_episode only

  void validate() const;
};

// Meta-training episode: support and novel queries from novel_train, base
// queries drawn uniformly from base_train, no unlabeled set.
Episode sample_incremental_episode(const DatasetBundle& bundle, const SamplerConfig& cfg,
                                   uint64_t index);

// As above plus an unlabeled set drawn from the training splits with its
// labels hidden behind the oracle guard.
Episode sample_fake_unlabeled_episode(const DatasetBundle& bundle, const SamplerConfig& cfg,
                                      uint64_t index);

// Evaluation episode from the test (or validation) splits. Transductive mode
// aliases U to the query set; semi-supervised mode draws a fresh unlabeled
// pool split by unlabeled_ratio; inductive mode leaves U empty.
Episode sample_test_episode(const DatasetBundle& bundle, const SamplerConfig& cfg,
                            uint64_t index);

// Self-describing text record (spec, label map, source index lists) used for
// golden-file regression tests.
std::string serialize_episode(const Episode& episode);

// Splits `total` into (base, novel) counts: novel = round(total * novel share),
// base takes the remainder.
std::pair<int, int> split_by_ratio(int total, std::pair<int, int> base_to_novel);

}  // namespace incfsl
