#include <cmath>

#include "incfsl/experiment.hpp"
#include "incfsl/rng.hpp"

namespace incfsl {

void SyntheticSpec::validate() const {
  if (n_base_classes < 1 || n_novel_classes < 1)
    throw ConfigError("SyntheticSpec: class counts must be positive");
  if (input_dim < 2) throw ConfigError("SyntheticSpec: input_dim must be >= 2");
  if (base_train_per_class < 1 || base_val_per_class < 1 || base_test_per_class < 1 ||
      novel_train_per_class < 1 || novel_val_per_class < 1 || novel_test_per_class < 1)
    throw ConfigError("SyntheticSpec: per-class counts must be positive");
  if (cluster_sigma <= 0.0) throw ConfigError("SyntheticSpec: cluster_sigma must be > 0");
  if (confusability < 0.0 || confusability > 1.0)
    throw ConfigError("SyntheticSpec: confusability must lie in [0, 1]");
}

namespace {

Vec random_unit(int dim, CounterRng& rng) {
  Vec v(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.next_gaussian();
    norm = v.norm();
  } while (norm < 1e-9);
  return v / norm;
}

double min_distance(const Vec& p, const std::vector<Vec>& centers) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : centers) best = std::min(best, (p - c).norm());
  return best;
}

std::vector<LabeledExample> sample_cluster(const Vec& center, int label, int count, double sigma,
                                           CounterRng& rng) {
  std::vector<LabeledExample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vec x = center;
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += sigma * rng.next_gaussian();
    out.push_back({std::move(x), label});
  }
  return out;
}

}  // namespace

DatasetBundle synthesize_dataset(const SyntheticSpec& spec, uint64_t seed) {
  spec.validate();
  DatasetBundle bundle;
  bundle.dim = spec.input_dim;

  CounterRng center_rng(seed, 0, Draw::CenterPlacement);

  // Base class centers: random unit directions.
  std::vector<Vec> base_centers;
  for (int c = 0; c < spec.n_base_classes; ++c) {
    bundle.base_classes.push_back(c + 1);
    base_centers.push_back(random_unit(spec.input_dim, center_rng));
  }

  // Novel centers per split: a kappa fraction is planted near a base center,
  // the rest are kept at least 4*sigma away from all of them.
  const int n_confusable =
      static_cast<int>(std::llround(spec.confusability * spec.n_novel_classes));
  int next_id = spec.n_base_classes + 1;
  struct NovelClass {
    int id;
    Vec center;
  };
  auto make_novel_split = [&](uint64_t split_tag) {
    std::vector<NovelClass> classes;
    CounterRng rng(seed, split_tag, Draw::CenterPlacement, 1);
    std::vector<int> order(static_cast<size_t>(spec.n_novel_classes));
    for (int i = 0; i < spec.n_novel_classes; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<bool> confusable(static_cast<size_t>(spec.n_novel_classes), false);
    for (int i = 0; i < n_confusable; ++i) confusable[static_cast<size_t>(order[i])] = true;

    for (int c = 0; c < spec.n_novel_classes; ++c) {
      Vec center;
      if (confusable[static_cast<size_t>(c)]) {
        const auto& anchor =
            base_centers[static_cast<size_t>(rng.next_int(spec.n_base_classes))];
        const double radius = rng.next_double() * 2.0 * spec.cluster_sigma;
        center = anchor + radius * random_unit(spec.input_dim, rng);
      } else {
        for (int attempt = 0; attempt < 1000; ++attempt) {
          center = random_unit(spec.input_dim, rng);
          if (min_distance(center, base_centers) > 4.0 * spec.cluster_sigma) break;
        }
      }
      classes.push_back({next_id++, std::move(center)});
    }
    return classes;
  };

  const auto novel_train_classes = make_novel_split(1);
  const auto novel_val_classes = make_novel_split(2);
  const auto novel_test_classes = make_novel_split(3);

  // Sample the six splits; each draws from its own substream.
  uint64_t draw_tag = 100;
  auto fill = [&](std::vector<LabeledExample>& split, const Vec& center, int label, int count) {
    CounterRng rng(seed, draw_tag++, Draw::SampleNoise);
    auto pts = sample_cluster(center, label, count, spec.cluster_sigma, rng);
    split.insert(split.end(), pts.begin(), pts.end());
  };

  for (int c = 0; c < spec.n_base_classes; ++c) {
    const Vec& center = base_centers[static_cast<size_t>(c)];
    fill(bundle.base_train, center, c + 1, spec.base_train_per_class);
    fill(bundle.base_val, center, c + 1, spec.base_val_per_class);
    fill(bundle.base_test, center, c + 1, spec.base_test_per_class);
  }
  auto fill_novel = [&](std::vector<LabeledExample>& split, const std::vector<NovelClass>& classes,
                        int per_class) {
    for (const auto& nc : classes) {
      bundle.novel_classes.push_back(nc.id);
      fill(split, nc.center, nc.id, per_class);
    }
  };
  fill_novel(bundle.novel_train, novel_train_classes, spec.novel_train_per_class);
  fill_novel(bundle.novel_val, novel_val_classes, spec.novel_val_per_class);
  fill_novel(bundle.novel_test, novel_test_classes, spec.novel_test_per_class);
  return bundle;
}

}  // namespace incfsl
