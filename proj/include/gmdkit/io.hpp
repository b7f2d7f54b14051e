#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <gmdkit/quadops.hpp>

namespace gmdkit::io {

// Matrix Market coordinate files. Real, integer and pattern fields are read;
// "general" files must be exactly symmetric. Writes use the symmetric header
// and the lower triangle.
QuadraticOperator read_matrix_market(const std::filesystem::path& path,
                                     OperatorKind kind = OperatorKind::custom);
void write_matrix_market(const std::filesystem::path& path, const QuadraticOperator& op);

// Headered CSV: first line "rows,cols", then one comma-separated row per line.
// Values are written in shortest round-trip form, so reading back is exact.
Matrix read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(const std::filesystem::path& path, const Matrix& m);
std::string format_double(double v);

// Raw binary: "GMDK", u32 rows, u32 cols, u32 flags, then rows*cols little-endian
// doubles in column-major order.
inline constexpr std::uint32_t binary_flag_centered = 1u;

struct BinaryMatrix
{
    Matrix values;
    std::uint32_t flags = 0;
};

BinaryMatrix read_binary_matrix(const std::filesystem::path& path);
void write_binary_matrix(const std::filesystem::path& path, const Matrix& m, std::uint32_t flags = 0);

/// Picks the binary reader for ".bin" / ".gmdk" files and CSV otherwise.
DataMatrix read_data(const std::filesystem::path& path);

} // namespace gmdkit::io
