#include <gmdkit/io.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace gmdkit::io {

namespace {

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

double parse_double(std::string_view tok, const std::filesystem::path& path)
{
    while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
    while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        fail(ErrorKind::io, "cannot parse number '" + std::string(tok) + "' in " + path.string());
    return v;
}

long long parse_int(std::string_view tok, const std::filesystem::path& path)
{
    while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
    while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        fail(ErrorKind::io, "cannot parse integer '" + std::string(tok) + "' in " + path.string());
    return v;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in)
{
    std::ifstream in(path, mode);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out)
{
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    return out;
}

} // namespace

std::string format_double(double v)
{
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc()) fail(ErrorKind::io, "cannot format number");
    return std::string(buf.data(), ptr);
}

QuadraticOperator read_matrix_market(const std::filesystem::path& path, OperatorKind kind)
{
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::io, "empty Matrix Market file " + path.string());
    std::istringstream hs(lower(line));
    std::string banner, object, format, field, symmetry;
    hs >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%matrixmarket" || object != "matrix")
        fail(ErrorKind::io, "missing Matrix Market banner in " + path.string());
    if (format != "coordinate")
        fail(ErrorKind::io, "only coordinate Matrix Market files are supported");
    if (field != "real" && field != "integer" && field != "double" && field != "pattern")
        fail(ErrorKind::io, "unsupported Matrix Market field '" + field + "'");
    if (symmetry != "symmetric" && symmetry != "general")
        fail(ErrorKind::io, "unsupported Matrix Market symmetry '" + symmetry + "'");
    const bool pattern = field == "pattern";

    do {
        if (!std::getline(in, line)) fail(ErrorKind::io, "truncated Matrix Market file");
    } while (line.empty() || line[0] == '%');
    long long rows = 0, cols = 0, nnz = 0;
    {
        std::istringstream ss(line);
        if (!(ss >> rows >> cols >> nnz)) fail(ErrorKind::io, "bad Matrix Market size line");
    }
    if (rows != cols || rows < 1) fail(ErrorKind::dimension, "quadratic operator file must be square");

    std::vector<QuadraticOperator::Entry> lower_tri;
    std::vector<QuadraticOperator::Entry> upper_tri;
    long long seen = 0;
    while (seen < nnz && std::getline(in, line)) {
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        std::string a, b, c;
        ss >> a >> b;
        if (!pattern) ss >> c;
        if (a.empty() || b.empty() || (!pattern && c.empty()))
            fail(ErrorKind::io, "bad Matrix Market entry line: " + line);
        Index i = parse_int(a, path) - 1;
        Index j = parse_int(b, path) - 1;
        double v = pattern ? 1.0 : parse_double(c, path);
        if (i < 0 || j < 0 || i >= rows || j >= cols) fail(ErrorKind::io, "Matrix Market entry out of range");
        if (symmetry == "symmetric") {
            if (i < j) std::swap(i, j);
            lower_tri.push_back({i, j, v});
        } else if (i >= j) {
            lower_tri.push_back({i, j, v});
        } else {
            upper_tri.push_back({j, i, v});
        }
        ++seen;
    }
    if (seen != nnz) fail(ErrorKind::io, "Matrix Market file has fewer entries than declared");

    auto op = QuadraticOperator::from_lower(rows, lower_tri, kind);
    if (symmetry == "general") {
        // Every strictly-upper entry must mirror a lower one and vice versa.
        SparseRowMatrix up(rows, rows);
        std::vector<Eigen::Triplet<double>> t;
        for (const auto& e : upper_tri) t.emplace_back(e.row, e.col, e.value);
        up.setFromTriplets(t.begin(), t.end());
        SparseRowMatrix lo(rows, rows);
        t.clear();
        for (const auto& e : lower_tri)
            if (e.row != e.col) t.emplace_back(e.row, e.col, e.value);
        lo.setFromTriplets(t.begin(), t.end());
        if ((SparseRowMatrix(up - lo)).norm() != 0.0)
            fail(ErrorKind::invalid_argument, "general Matrix Market operator is not symmetric");
    }
    return op;
}

void write_matrix_market(const std::filesystem::path& path, const QuadraticOperator& op)
{
    auto out = open_out(path);
    auto entries = op.lower_entries();
    out << "%%MatrixMarket matrix coordinate real symmetric\n";
    out << op.dim() << ' ' << op.dim() << ' ' << entries.size() << '\n';
    for (const auto& e : entries)
        out << (e.row + 1) << ' ' << (e.col + 1) << ' ' << format_double(e.value) << '\n';
    if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

Matrix read_csv_matrix(const std::filesystem::path& path)
{
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::io, "empty CSV file " + path.string());
    auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorKind::io, "CSV header must be 'rows,cols'");
    long long rows = parse_int(std::string_view(line).substr(0, comma), path);
    long long cols = parse_int(std::string_view(line).substr(comma + 1), path);
    if (rows < 0 || cols < 0) fail(ErrorKind::io, "negative CSV dimensions");
    Matrix m(rows, cols);
    for (long long i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) fail(ErrorKind::io, "CSV file has fewer rows than declared");
        std::string_view rest(line);
        for (long long j = 0; j < cols; ++j) {
            auto pos = rest.find(',');
            if (j + 1 < cols && pos == std::string_view::npos)
                fail(ErrorKind::io, "CSV row " + std::to_string(i) + " has too few columns");
            auto tok = rest.substr(0, pos);
            m(i, j) = parse_double(tok, path);
            rest = pos == std::string_view::npos ? std::string_view() : rest.substr(pos + 1);
        }
        if (!rest.empty() && rest.find_first_not_of(" \r\t") != std::string_view::npos)
            fail(ErrorKind::io, "CSV row " + std::to_string(i) + " has too many columns");
    }
    return m;
}

void write_csv_matrix(const std::filesystem::path& path, const Matrix& m)
{
    auto out = open_out(path);
    out << m.rows() << ',' << m.cols() << '\n';
    std::string row;
    for (Index i = 0; i < m.rows(); ++i) {
        row.clear();
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) row.push_back(',');
            row += format_double(m(i, j));
        }
        out << row << '\n';
    }
    if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v)
{
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b)
{
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

BinaryMatrix read_binary_matrix(const std::filesystem::path& path)
{
    auto in = open_in(path, std::ios::binary);
    unsigned char header[16];
    if (!in.read(reinterpret_cast<char*>(header), 16)) fail(ErrorKind::io, "truncated binary header");
    if (std::memcmp(header, "GMDK", 4) != 0) fail(ErrorKind::io, "bad binary magic in " + path.string());
    std::uint32_t rows = get_u32(header + 4);
    std::uint32_t cols = get_u32(header + 8);
    BinaryMatrix bm;
    bm.flags = get_u32(header + 12);
    bm.values.resize(rows, cols);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> raw(count * 8);
    if (count && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        fail(ErrorKind::io, "truncated binary payload in " + path.string());
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | raw[k * 8 + static_cast<std::size_t>(b)];
        bm.values.data()[k] = std::bit_cast<double>(bits);
    }
    return bm;
}

void write_binary_matrix(const std::filesystem::path& path, const Matrix& m, std::uint32_t flags)
{
    auto out = open_out(path, std::ios::binary);
    out.write("GMDK", 4);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    put_u32(out, flags);
    std::vector<unsigned char> raw(static_cast<std::size_t>(m.size()) * 8);
    for (Index k = 0; k < m.size(); ++k) {
        auto bits = std::bit_cast<std::uint64_t>(m.data()[k]);
        for (int b = 0; b < 8; ++b) raw[static_cast<std::size_t>(k) * 8 + static_cast<std::size_t>(b)] =
                                        static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

DataMatrix read_data(const std::filesystem::path& path)
{
    auto ext = lower(path.extension().string());
    if (ext == ".bin" || ext == ".gmdk") {
        auto bm = read_binary_matrix(path);
        return DataMatrix(std::move(bm.values), (bm.flags & binary_flag_centered) != 0);
    }
    return DataMatrix(read_csv_matrix(path), false);
}

} // namespace gmdkit::io
