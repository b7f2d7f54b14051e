#include <gtest/gtest.h>

#include <gmdkit/io.hpp>

#include "oracles.hpp"
#include "support.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace gmdkit;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() /
               ("gmdkit_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path file(const std::string& name) const { return dir_ / name; }

    fs::path write_text(const std::string& name, const std::string& text) const
    {
        std::ofstream(file(name)) << text;
        return file(name);
    }

    fs::path dir_;
};

} // namespace

using IoTest = TempDir;

TEST_F(IoTest, CsvRoundTripIsExact)
{
    Rng rng(91);
    Matrix m = standard_normal_matrix(rng, 7, 5);
    m(0, 0) = 1e-300;
    m(1, 1) = -std::numeric_limits<double>::max();
    m(2, 2) = 0.1;
    m(3, 3) = -0.0;
    io::write_csv_matrix(file("m.csv"), m);
    Matrix back = io::read_csv_matrix(file("m.csv"));
    ASSERT_EQ(back.rows(), 7);
    ASSERT_EQ(back.cols(), 5);
    EXPECT_EQ(back, m);
}

TEST_F(IoTest, CsvFormatAndParsing)
{
    EXPECT_EQ(io::format_double(0.1), "0.1");
    EXPECT_EQ(io::format_double(2.0), "2");
    Matrix m = io::read_csv_matrix(write_text("a.csv", "2,3\n1, 2 ,3\n4,5,6e-1\n"));
    Matrix expect(2, 3);
    expect << 1, 2, 3, 4, 5, 0.6;
    EXPECT_EQ(m, expect);
    EXPECT_EQ(io::read_csv_matrix(write_text("crlf.csv", "1,2\r\n7,8\r\n")), (Matrix(1, 2) << 7, 8).finished());
}

TEST_F(IoTest, CsvErrors)
{
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(file("missing.csv")); });
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(write_text("e.csv", "")); });
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(write_text("h.csv", "3\n1\n")); });
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(write_text("r.csv", "2,2\n1,2\n")); });
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(write_text("c.csv", "1,2\n1\n")); });
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(write_text("x.csv", "1,2\n1,2,3\n")); });
    expect_kind(ErrorKind::io, [&] { io::read_csv_matrix(write_text("n.csv", "1,2\n1,abc\n")); });
}

TEST_F(IoTest, BinaryRoundTripAndLayout)
{
    Rng rng(92);
    Matrix m = standard_normal_matrix(rng, 4, 3);
    io::write_binary_matrix(file("m.bin"), m, io::binary_flag_centered);
    EXPECT_EQ(fs::file_size(file("m.bin")), 16u + 4u * 3u * 8u);
    io::BinaryMatrix b = io::read_binary_matrix(file("m.bin"));
    EXPECT_EQ(b.values, m);
    EXPECT_EQ(b.flags, io::binary_flag_centered);

    std::ifstream in(file("m.bin"), std::ios::binary);
    char head[16];
    in.read(head, 16);
    EXPECT_EQ(std::string(head, 4), "GMDK");
    double first = 0.0, second = 0.0;
    in.read(reinterpret_cast<char*>(&first), 8);
    in.read(reinterpret_cast<char*>(&second), 8);
    EXPECT_EQ(first, m(0, 0));
    EXPECT_EQ(second, m(1, 0));
}

TEST_F(IoTest, BinaryErrors)
{
    expect_kind(ErrorKind::io, [&] { io::read_binary_matrix(write_text("bad.bin", "XXXX0000000000000000")); });
    expect_kind(ErrorKind::io, [&] { io::read_binary_matrix(write_text("short.bin", "GMDK")); });
    io::write_binary_matrix(file("t.bin"), Matrix::Ones(3, 3));
    fs::resize_file(file("t.bin"), 40);
    expect_kind(ErrorKind::io, [&] { io::read_binary_matrix(file("t.bin")); });
}

TEST_F(IoTest, ReadDataDispatchesOnExtension)
{
    Matrix m = Matrix::Identity(3, 2);
    io::write_csv_matrix(file("d.csv"), m);
    io::write_binary_matrix(file("d.bin"), m, io::binary_flag_centered);
    io::write_binary_matrix(file("d.GMDK"), m);
    DataMatrix a = io::read_data(file("d.csv")), b = io::read_data(file("d.bin")), c = io::read_data(file("d.GMDK"));
    EXPECT_EQ(a.values, m);
    EXPECT_FALSE(a.centered);
    EXPECT_EQ(b.values, m);
    EXPECT_TRUE(b.centered);
    EXPECT_FALSE(c.centered);
}

TEST_F(IoTest, MatrixMarketRoundTrip)
{
    const QuadraticOperator op = build_grid_laplacian(4, 5);
    io::write_matrix_market(file("l.mtx"), op);
    QuadraticOperator back = io::read_matrix_market(file("l.mtx"));
    EXPECT_EQ(back.dim(), 20);
    EXPECT_EQ(oracle::dense(back), oracle::dense(op));
}

TEST_F(IoTest, MatrixMarketHeaders)
{
    QuadraticOperator sym = io::read_matrix_market(write_text(
        "s.mtx", "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 3\n1 1 2\n2 1 -1\n3 3 1.5\n"));
    Matrix expect(3, 3);
    expect << 2, -1, 0, -1, 0, 0, 0, 0, 1.5;
    EXPECT_EQ(oracle::dense(sym), expect);

    QuadraticOperator gen = io::read_matrix_market(
        write_text("g.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 3\n1 2 4\n2 1 4\n2 2 1\n"));
    EXPECT_EQ(oracle::dense(gen), (Matrix(2, 2) << 0, 4, 4, 1).finished());

    QuadraticOperator pat = io::read_matrix_market(
        write_text("p.mtx", "%%MatrixMarket matrix coordinate pattern symmetric\n2 2 2\n1 1\n2 2\n"));
    EXPECT_EQ(oracle::dense(pat), Matrix::Identity(2, 2));
}

TEST_F(IoTest, MatrixMarketErrors)
{
    expect_kind(ErrorKind::io, [&] { io::read_matrix_market(file("none.mtx")); });
    expect_kind(ErrorKind::io, [&] { io::read_matrix_market(write_text("b.mtx", "3 3 1\n1 1 1\n")); });
    expect_kind(ErrorKind::io, [&] {
        io::read_matrix_market(write_text("a.mtx", "%%MatrixMarket matrix array real general\n2 2\n1\n0\n0\n1\n"));
    });
    expect_kind(ErrorKind::io, [&] {
        io::read_matrix_market(write_text("c.mtx", "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n"));
    });
    expect_kind(ErrorKind::dimension, [&] {
        io::read_matrix_market(write_text("r.mtx", "%%MatrixMarket matrix coordinate real general\n2 3 1\n1 1 1\n"));
    });
    expect_kind(ErrorKind::io, [&] {
        io::read_matrix_market(write_text("o.mtx", "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1\n"));
    });
    expect_kind(ErrorKind::io, [&] {
        io::read_matrix_market(write_text("f.mtx", "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n"));
    });
    expect_kind(ErrorKind::invalid_argument, [&] {
        io::read_matrix_market(write_text("u.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 1\n"));
    });
}
