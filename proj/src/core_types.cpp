#include "incfsl/core_types.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace incfsl {

const char* split_name(Split s) {
  switch (s) {
    case Split::BaseTrain: return "base_train";
    case Split::BaseVal: return "base_val";
    case Split::BaseTest: return "base_test";
    case Split::NovelTrain: return "novel_train";
    case Split::NovelVal: return "novel_val";
    case Split::NovelTest: return "novel_test";
  }
  return "?";
}

const std::vector<LabeledExample>& DatasetBundle::split(Split s) const {
  switch (s) {
    case Split::BaseTrain: return base_train;
    case Split::BaseVal: return base_val;
    case Split::BaseTest: return base_test;
    case Split::NovelTrain: return novel_train;
    case Split::NovelVal: return novel_val;
    case Split::NovelTest: return novel_test;
  }
  throw std::logic_error("bad split");
}

std::vector<LabeledExample>& DatasetBundle::split(Split s) {
  return const_cast<std::vector<LabeledExample>&>(
      static_cast<const DatasetBundle*>(this)->split(s));
}

namespace {

void check_split_labels(const std::vector<LabeledExample>& split, const char* name,
                        const std::set<int>& allowed, int dim,
                        std::vector<std::string>& out) {
  for (size_t i = 0; i < split.size(); ++i) {
    const auto& ex = split[i];
    if (!allowed.count(ex.label)) {
      std::ostringstream os;
      os << name << ": example " << i << " labeled with class " << ex.label
         << " outside its split's class set";
      out.push_back(os.str());
    }
    if (dim > 0 && ex.features.size() != dim) {
      std::ostringstream os;
      os << name << ": example " << i << " has feature length " << ex.features.size()
         << ", expected " << dim;
      out.push_back(os.str());
    }
  }
}

std::set<int> label_set(const std::vector<LabeledExample>& split) {
  std::set<int> s;
  for (const auto& ex : split) s.insert(ex.label);
  return s;
}

}  // namespace

std::vector<std::string> validate_bundle(const DatasetBundle& bundle) {
  std::vector<std::string> issues;

  const std::set<int> base(bundle.base_classes.begin(), bundle.base_classes.end());
  const std::set<int> novel(bundle.novel_classes.begin(), bundle.novel_classes.end());
  for (int id : base) {
    if (novel.count(id)) {
      std::ostringstream os;
      os << "class " << id << " appears in both base_classes and novel_classes";
      issues.push_back(os.str());
    }
  }

  const auto nt = label_set(bundle.novel_train);
  const auto nv = label_set(bundle.novel_val);
  const auto ns = label_set(bundle.novel_test);
  auto report_overlap = [&](const std::set<int>& a, const std::set<int>& b, const char* an,
                            const char* bn) {
    for (int id : a) {
      if (b.count(id)) {
        std::ostringstream os;
        os << "novel class " << id << " appears in both " << an << " and " << bn;
        issues.push_back(os.str());
      }
    }
  };
  report_overlap(nt, nv, "novel_train", "novel_val");
  report_overlap(nt, ns, "novel_train", "novel_test");
  report_overlap(nv, ns, "novel_val", "novel_test");

  check_split_labels(bundle.base_train, "base_train", base, bundle.dim, issues);
  check_split_labels(bundle.base_val, "base_val", base, bundle.dim, issues);
  check_split_labels(bundle.base_test, "base_test", base, bundle.dim, issues);
  check_split_labels(bundle.novel_train, "novel_train", novel, bundle.dim, issues);
  check_split_labels(bundle.novel_val, "novel_val", novel, bundle.dim, issues);
  check_split_labels(bundle.novel_test, "novel_test", novel, bundle.dim, issues);
  return issues;
}

const char* mode_name(EpisodeMode m) {
  switch (m) {
    case EpisodeMode::Inductive: return "inductive";
    case EpisodeMode::Transductive: return "transductive";
    case EpisodeMode::SemiSupervised: return "semi_supervised";
  }
  return "?";
}

EpisodeMode mode_from_name(const std::string& name) {
  if (name == "inductive") return EpisodeMode::Inductive;
  if (name == "transductive") return EpisodeMode::Transductive;
  if (name == "semi_supervised" || name == "semi") return EpisodeMode::SemiSupervised;
  throw ConfigError("unknown episode mode: " + name);
}

void EpisodeSpec::validate() const {
  if (n_way < 1) throw ConfigError("EpisodeSpec: n_way must be >= 1");
  if (k_shot < 1) throw ConfigError("EpisodeSpec: k_shot must be >= 1");
  if (n_query_novel < 0 || n_query_base < 0 || n_unlabeled_novel < 0 || n_unlabeled_base < 0)
    throw ConfigError("EpisodeSpec: counts must be non-negative");
}

Mat ClassifierWeights::joint() const {
  Mat w(base.rows(), base.cols() + novel.cols());
  w.leftCols(base.cols()) = base;
  if (novel.cols() > 0) w.rightCols(novel.cols()) = novel;
  return w;
}

bool ClassifierWeights::all_finite() const {
  return base.allFinite() && (novel.size() == 0 || novel.allFinite());
}

ClassifierWeights build_joint_weights(const Mat& base, const Mat& novel) {
  if (novel.size() > 0 && novel.rows() != base.rows())
    throw ShapeError("build_joint_weights: base and novel feature dimensions differ");
  ClassifierWeights w;
  w.base = base;
  w.novel = novel.size() > 0 ? novel : Mat(base.rows(), 0);
  return w;
}

bool PredictionMatrix::rows_are_distributions(double tol) const {
  for (int i = 0; i < probs.rows(); ++i) {
    double sum = 0.0;
    for (int j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (!(p >= 0.0 && p <= 1.0 + tol)) return false;
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

std::pair<std::vector<LabeledExample>, std::map<int, int>> relabel_novel(
    const std::vector<LabeledExample>& support_raw, int n_base, int expected_ways) {
  std::set<int> ids;
  for (const auto& ex : support_raw) ids.insert(ex.label);
  if (expected_ways > 0 && static_cast<int>(ids.size()) != expected_ways) {
    std::ostringstream os;
    os << "relabel_novel: found " << ids.size() << " distinct class ids, expected "
       << expected_ways;
    throw ShapeError(os.str());
  }
  std::map<int, int> label_map;
  int next = n_base + 1;
  for (int id : ids) label_map[id] = next++;  // std::set iterates sorted

  std::vector<LabeledExample> relabeled = support_raw;
  for (auto& ex : relabeled) ex.label = label_map.at(ex.label);
  return {std::move(relabeled), std::move(label_map)};
}

Mat stack_inputs(const std::vector<LabeledExample>& examples) {
  if (examples.empty()) return Mat(0, 0);
  Mat x(static_cast<Eigen::Index>(examples.size()), examples.front().features.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].features.size() != x.cols())
      throw ShapeError("stack_inputs: inconsistent feature lengths");
    x.row(static_cast<Eigen::Index>(i)) = examples[i].features.transpose();
  }
  return x;
}

Mat stack_inputs(const std::vector<Vec>& vectors) {
  if (vectors.empty()) return Mat(0, 0);
  Mat x(static_cast<Eigen::Index>(vectors.size()), vectors.front().size());
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != x.cols())
      throw ShapeError("stack_inputs: inconsistent feature lengths");
    x.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
  }
  return x;
}

std::vector<int> labels_of(const std::vector<LabeledExample>& examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.label);
  return out;
}

}  // namespace incfsl
