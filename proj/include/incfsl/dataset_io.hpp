#pragma once

#include <string>

#include "incfsl/core_types.hpp"

namespace incfsl {

// Binary bundle container (little-endian, layout in docs/FORMATS.md):
// magic "IFSLBNDL", u32 version, u32 dim, class-id lists, then the six splits
// in fixed order, each as u64 count followed by (i32 label, dim f64) records.
void save_bundle(const std::string& path, const DatasetBundle& bundle);
DatasetBundle load_bundle(const std::string& path);

}  // namespace incfsl
