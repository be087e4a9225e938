#include "coop/grid_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "coop/error.hpp"

namespace coop {

namespace {

constexpr char kMagic[4] = {'B', 'E', 'V', 'G'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 5;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[pos + std::size_t(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_grid(const Grid& grid) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + std::size_t(grid.size()) * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kGridFormatVersion);
  put_u32(out, std::uint32_t(grid.channels()));
  put_u32(out, std::uint32_t(grid.height()));
  put_u32(out, std::uint32_t(grid.width()));
  put_u32(out, std::bit_cast<std::uint32_t>(float(grid.cell_size())));
  const auto& d = grid.data();
  for (Index c = 0; c < d.rows(); ++c)
    for (Index i = 0; i < d.cols(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(d(c, i)));
  return out;
}

Grid decode_grid(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw InvalidInput("not a BEVG grid");
  if (get_u32(bytes, 4) != kGridFormatVersion) throw InvalidInput("unsupported BEVG version");
  const std::uint64_t C = get_u32(bytes, 8), H = get_u32(bytes, 12), W = get_u32(bytes, 16);
  const float cs = std::bit_cast<float>(get_u32(bytes, 20));
  if (bytes.size() != kHeaderBytes + C * H * W * 4) throw InvalidInput("BEVG payload size mismatch");
  Grid g(Index(C), Index(H), Index(W), cs);
  std::size_t pos = kHeaderBytes;
  for (Index c = 0; c < g.channels(); ++c)
    for (Index i = 0; i < g.cells(); ++i, pos += 4) g.data()(c, i) = std::bit_cast<float>(get_u32(bytes, pos));
  return g;
}

void save_grid(const std::string& path, const Grid& grid) {
  const auto bytes = encode_grid(grid);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Grid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_grid(bytes);
}

}  // namespace coop
