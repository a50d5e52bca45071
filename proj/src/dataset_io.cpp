#include "incfsl/dataset_io.hpp"

#include <cstring>
#include <fstream>

namespace incfsl {

namespace {

constexpr char kMagic[8] = {'I', 'F', 'S', 'L', 'B', 'N', 'D', 'L'};
constexpr uint32_t kVersion = 1;

const Split kSplitOrder[6] = {Split::BaseTrain, Split::BaseVal,   Split::BaseTest,
                              Split::NovelTrain, Split::NovelVal, Split::NovelTest};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
int32_t get_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_bundle(const std::string& path, const DatasetBundle& bundle) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_bundle: cannot open " + path);
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(bundle.dim));
  put_u64(os, bundle.base_classes.size());
  for (int id : bundle.base_classes) put_i32(os, id);
  put_u64(os, bundle.novel_classes.size());
  for (int id : bundle.novel_classes) put_i32(os, id);
  for (Split s : kSplitOrder) {
    const auto& split = bundle.split(s);
    put_u64(os, split.size());
    for (const auto& ex : split) {
      put_i32(os, ex.label);
      for (Eigen::Index i = 0; i < ex.features.size(); ++i) put_f64(os, ex.features(i));
    }
  }
  if (!os) throw std::runtime_error("save_bundle: write failed for " + path);
}

DatasetBundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_bundle: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_bundle: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("load_bundle: unsupported version " + std::to_string(version));

  DatasetBundle bundle;
  bundle.dim = static_cast<int>(get_u32(is));
  const uint64_t n_base = get_u64(is);
  bundle.base_classes.resize(n_base);
  for (auto& id : bundle.base_classes) id = get_i32(is);
  const uint64_t n_novel = get_u64(is);
  bundle.novel_classes.resize(n_novel);
  for (auto& id : bundle.novel_classes) id = get_i32(is);

  for (Split s : kSplitOrder) {
    auto& split = bundle.split(s);
    const uint64_t count = get_u64(is);
    split.resize(count);
    for (auto& ex : split) {
      ex.label = get_i32(is);
      ex.features.resize(bundle.dim);
      for (Eigen::Index i = 0; i < ex.features.size(); ++i) ex.features(i) = get_f64(is);
    }
  }
  if (!is) throw std::runtime_error("load_bundle: truncated file " + path);
  return bundle;
}

}  // namespace incfsl
