#include "incfsl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "incfsl/rng.hpp"

namespace incfsl {

void SamplerConfig::validate() const {
  spec.validate();
  if (spec.mode == EpisodeMode::SemiSupervised && unlabeled_ratio.first == 0 &&
      unlabeled_ratio.second == 0)
    throw ConfigError("SamplerConfig: unlabeled ratio components must not both be zero");
  if (unlabeled_ratio.first < 0 || unlabeled_ratio.second < 0)
    throw ConfigError("SamplerConfig: unlabeled ratio components must be non-negative");
}

std::pair<int, int> split_by_ratio(int total, std::pair<int, int> base_to_novel) {
  const auto [rb, rn] = base_to_novel;
  if (rb < 0 || rn < 0 || (rb == 0 && rn == 0))
    throw ConfigError("split_by_ratio: invalid ratio");
  const double novel_share = static_cast<double>(rn) / static_cast<double>(rb + rn);
  const int novel = static_cast<int>(std::llround(total * novel_share));
  return {total - novel, novel};
}

namespace {

struct SplitPair {
  Split novel;
  Split base;
};

SplitPair splits_for(EvalSplit which) {
  switch (which) {
    case EvalSplit::Train: return {Split::NovelTrain, Split::BaseTrain};
    case EvalSplit::Val: return {Split::NovelVal, Split::BaseVal};
    case EvalSplit::Test: return {Split::NovelTest, Split::BaseTest};
  }
  throw std::logic_error("bad eval split");
}

std::map<int, std::vector<int>> index_by_class(const std::vector<LabeledExample>& split) {
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < split.size(); ++i)
    by_class[split[i].label].push_back(static_cast<int>(i));
  return by_class;
}

// Evenly distributes `total` over `ways` slots; earlier slots take the
// remainder, so the assignment is deterministic.
std::vector<int> distribute(int total, int ways) {
  std::vector<int> out(static_cast<size_t>(ways), total / ways);
  for (int i = 0; i < total % ways; ++i) ++out[static_cast<size_t>(i)];
  return out;
}

[[noreturn]] void insufficient(int class_id, const char* what, size_t have, int need) {
  std::ostringstream os;
  os << "class " << class_id << ": needs " << need << " examples for " << what << " but only "
     << have << " remain";
  throw SamplingError(os.str());
}

// Draws `count` distinct positions from `pool` (erasing them) using `rng`.
std::vector<int> draw_from_pool(std::vector<int>& pool, int count, CounterRng& rng,
                                int class_id, const char* what) {
  if (count > static_cast<int>(pool.size()))
    insufficient(class_id, what, pool.size(), count);
  std::vector<int> picked_pos = rng.sample_without_replacement(static_cast<int>(pool.size()), count);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(count));
  for (int p : picked_pos) out.push_back(pool[static_cast<size_t>(p)]);
  // Erase picked entries (descending positions keep indices stable).
  std::sort(picked_pos.begin(), picked_pos.end(), std::greater<int>());
  for (int p : picked_pos) pool.erase(pool.begin() + p);
  return out;
}

struct EpisodeBuild {
  bool with_unlabeled = false;
  int n_unlabeled_novel = 0;
  int n_unlabeled_base = 0;
  bool transductive = false;
};

Episode sample_episode_impl(const DatasetBundle& bundle, const SamplerConfig& cfg, uint64_t index,
                            EvalSplit source, const EpisodeBuild& build) {
  cfg.validate();
  const EpisodeSpec& spec = cfg.spec;
  const SplitPair sp = splits_for(source);
  const auto& novel_split = bundle.split(sp.novel);
  const auto& base_split = bundle.split(sp.base);
  const int n_base = bundle.n_base_classes();
  const int n_way = spec.n_way;

  auto by_class = index_by_class(novel_split);
  if (static_cast<int>(by_class.size()) < n_way) {
    std::ostringstream os;
    os << split_name(sp.novel) << " has " << by_class.size() << " classes, episode needs "
       << n_way;
    throw SamplingError(os.str());
  }

  // 1. Choose the episode's novel classes.
  std::vector<int> class_ids;
  class_ids.reserve(by_class.size());
  for (const auto& [id, _] : by_class) class_ids.push_back(id);
  CounterRng rng_cls(cfg.stream_seed, index, Draw::NovelClassChoice);
  std::vector<int> chosen;
  for (int pos : rng_cls.sample_without_replacement(static_cast<int>(class_ids.size()), n_way))
    chosen.push_back(class_ids[static_cast<size_t>(pos)]);
  std::sort(chosen.begin(), chosen.end());

  // 2. Relabel: sorted original ids -> n_base+1 .. n_base+N.
  std::map<int, int> label_map;
  for (int j = 0; j < n_way; ++j) label_map[chosen[static_cast<size_t>(j)]] = n_base + 1 + j;

  Episode ep;
  ep.spec = spec;
  ep.spec.seed = cfg.stream_seed;
  ep.label_map = label_map;
  ep.n_base = n_base;
  ep.index = index;

  // 3. Per-class draws from disjoint remainders of each class pool.
  const std::vector<int> q_per_class = distribute(spec.n_query_novel, n_way);
  const std::vector<int> u_per_class = distribute(build.n_unlabeled_novel, n_way);
  CounterRng rng_sup(cfg.stream_seed, index, Draw::SupportDraw);
  CounterRng rng_nq(cfg.stream_seed, index, Draw::NovelQueryDraw);
  CounterRng rng_nu(cfg.stream_seed, index, Draw::UnlabeledNovelDraw);

  std::vector<LabeledExample> novel_queries;
  std::vector<SourceRef> novel_query_src;
  std::vector<Vec> unlabeled_feats;
  std::vector<int> unlabeled_labels;
  std::vector<SourceRef> unlabeled_src;

  for (int j = 0; j < n_way; ++j) {
    const int cid = chosen[static_cast<size_t>(j)];
    const int episode_label = label_map.at(cid);
    std::vector<int> pool = by_class.at(cid);

    for (int idx : draw_from_pool(pool, spec.k_shot, rng_sup, cid, "support")) {
      ep.support.push_back({novel_split[static_cast<size_t>(idx)].features, episode_label});
      ep.support_src.push_back({sp.novel, idx});
    }
    for (int idx : draw_from_pool(pool, q_per_class[static_cast<size_t>(j)], rng_nq, cid,
                                  "novel queries")) {
      novel_queries.push_back({novel_split[static_cast<size_t>(idx)].features, episode_label});
      novel_query_src.push_back({sp.novel, idx});
    }
    if (build.with_unlabeled) {
      for (int idx : draw_from_pool(pool, u_per_class[static_cast<size_t>(j)], rng_nu, cid,
                                    "unlabeled")) {
        unlabeled_feats.push_back(novel_split[static_cast<size_t>(idx)].features);
        unlabeled_labels.push_back(episode_label);
        unlabeled_src.push_back({sp.novel, idx});
      }
    }
  }

  // 4. Base queries: uniform over the whole base split, no within-episode
  // repeats; unlabeled base examples come from the remainder.
  if (spec.n_query_base > static_cast<int>(base_split.size()))
    insufficient(0, "base queries", base_split.size(), spec.n_query_base);
  std::vector<int> base_pool(base_split.size());
  for (size_t i = 0; i < base_split.size(); ++i) base_pool[i] = static_cast<int>(i);
  CounterRng rng_bq(cfg.stream_seed, index, Draw::BaseQueryDraw);
  std::vector<LabeledExample> base_queries;
  std::vector<SourceRef> base_query_src;
  for (int idx : draw_from_pool(base_pool, spec.n_query_base, rng_bq, 0, "base queries")) {
    base_queries.push_back(base_split[static_cast<size_t>(idx)]);
    base_query_src.push_back({sp.base, idx});
  }

  std::vector<Vec> unlabeled_base_feats;
  std::vector<int> unlabeled_base_labels;
  std::vector<SourceRef> unlabeled_base_src;
  if (build.with_unlabeled && build.n_unlabeled_base > 0) {
    CounterRng rng_bu(cfg.stream_seed, index, Draw::UnlabeledBaseDraw);
    for (int idx : draw_from_pool(base_pool, build.n_unlabeled_base, rng_bu, 0,
                                  "unlabeled base")) {
      unlabeled_base_feats.push_back(base_split[static_cast<size_t>(idx)].features);
      unlabeled_base_labels.push_back(base_split[static_cast<size_t>(idx)].label);
      unlabeled_base_src.push_back({sp.base, idx});
    }
  }

  // 5. Assemble: query and unlabeled sets list base entries first.
  ep.query = std::move(base_queries);
  ep.query.insert(ep.query.end(), novel_queries.begin(), novel_queries.end());
  ep.query_src = std::move(base_query_src);
  ep.query_src.insert(ep.query_src.end(), novel_query_src.begin(), novel_query_src.end());

  if (build.transductive) {
    std::vector<Vec> feats;
    std::vector<int> labels;
    feats.reserve(ep.query.size());
    for (const auto& q : ep.query) {
      feats.push_back(q.features);
      labels.push_back(q.label);
    }
    ep.unlabeled = UnlabeledSet(std::move(feats), std::move(labels));
    ep.unlabeled_src = ep.query_src;
    ep.transductive_aliased = true;
  } else if (build.with_unlabeled) {
    std::vector<Vec> feats = std::move(unlabeled_base_feats);
    feats.insert(feats.end(), unlabeled_feats.begin(), unlabeled_feats.end());
    std::vector<int> labels = std::move(unlabeled_base_labels);
    labels.insert(labels.end(), unlabeled_labels.begin(), unlabeled_labels.end());
    ep.unlabeled = UnlabeledSet(std::move(feats), std::move(labels));
    ep.unlabeled_src = std::move(unlabeled_base_src);
    ep.unlabeled_src.insert(ep.unlabeled_src.end(), unlabeled_src.begin(), unlabeled_src.end());
  }
  return ep;
}

}  // namespace

Episode sample_incremental_episode(const DatasetBundle& bundle, const SamplerConfig& cfg,
                                   uint64_t index) {
  return sample_episode_impl(bundle, cfg, index, EvalSplit::Train, EpisodeBuild{});
}

Episode sample_fake_unlabeled_episode(const DatasetBundle& bundle, const SamplerConfig& cfg,
                                      uint64_t index) {
  const EpisodeSpec& spec = cfg.spec;
  if (spec.mode == EpisodeMode::SemiSupervised && spec.n_unlabeled_novel == 0 &&
      spec.n_unlabeled_base == 0)
    throw SamplingError("fake unlabeled episode: unlabeled counts are (0, 0)");
  EpisodeBuild build;
  build.with_unlabeled = true;
  build.n_unlabeled_novel = spec.n_unlabeled_novel;
  build.n_unlabeled_base = spec.n_unlabeled_base;
  return sample_episode_impl(bundle, cfg, index, EvalSplit::Train, build);
}

Episode sample_test_episode(const DatasetBundle& bundle, const SamplerConfig& cfg,
                            uint64_t index) {
  const EpisodeSpec& spec = cfg.spec;
  EpisodeBuild build;
  switch (spec.mode) {
    case EpisodeMode::Inductive:
      break;
    case EpisodeMode::Transductive:
      build.transductive = true;
      break;
    case EpisodeMode::SemiSupervised: {
      const int total = spec.n_unlabeled_novel + spec.n_unlabeled_base;
      if (total == 0)
        throw SamplingError("semi-supervised test episode: unlabeled counts are (0, 0)");
      const auto [nb, nn] = split_by_ratio(total, cfg.unlabeled_ratio);
      build.with_unlabeled = true;
      build.n_unlabeled_base = nb;
      build.n_unlabeled_novel = nn;
      break;
    }
  }
  return sample_episode_impl(bundle, cfg, index, cfg.eval_split, build);
}

std::string serialize_episode(const Episode& ep) {
  std::ostringstream os;
  os << "episode\tindex=" << ep.index << "\tseed=" << ep.spec.seed << "\tmode="
     << mode_name(ep.spec.mode) << "\tn_way=" << ep.spec.n_way << "\tk_shot=" << ep.spec.k_shot
     << "\tn_base=" << ep.n_base << "\ttransductive_aliased=" << (ep.transductive_aliased ? 1 : 0)
     << "\n";
  os << "label_map";
  for (const auto& [orig, relab] : ep.label_map) os << "\t" << orig << ":" << relab;
  os << "\n";
  auto dump = [&os](const char* name, const std::vector<SourceRef>& refs) {
    os << name;
    for (const auto& r : refs) os << "\t" << split_name(r.split) << ":" << r.index;
    os << "\n";
  };
  dump("support", ep.support_src);
  dump("query", ep.query_src);
  dump("unlabeled", ep.unlabeled_src);
  return os.str();
}

}  // namespace incfsl
