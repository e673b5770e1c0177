#pragma once

#include "kvedit/tensor.hpp"

#include <filesystem>

namespace kvedit {

/// Dense matrix in the shared binary framing (magic "KVEDITMX").
void save_matrix(const std::filesystem::path& path, const DenseMatrix& m);
DenseMatrix load_matrix(const std::filesystem::path& path);

}  // namespace kvedit
