#include "dgsan/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dgsan/errors.hpp"

namespace dgsan {

namespace {

constexpr char kMagic[] = {'D', 'G', 'S', 'N', '1'};

template <typename UInt>
void put_le(std::string& buf, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}
  bool done() const { return pos_ == data_.size(); }

  template <typename UInt>
  UInt get_le() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(UInt);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ConfigError("truncated checkpoint: " + source_);
  }
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterValues& params) {
  std::string buf(std::begin(kMagic), std::end(kMagic));
  for (const auto& [name, value] : params) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_le<std::uint32_t>(buf, 2);
    put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(value.rows()));
    put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(value.cols()));
    for (Eigen::Index r = 0; r < value.rows(); ++r)
      for (Eigen::Index c = 0; c < value.cols(); ++c)
        put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(value(r, c)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ConfigError("failed writing checkpoint: " + path.string());
}

ParameterValues load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.get_bytes(sizeof(kMagic)) != std::string(std::begin(kMagic), std::end(kMagic)))
    throw ConfigError("not a DGSN1 checkpoint: " + path.string());

  ParameterValues params;
  while (!r.done()) {
    const auto name_len = r.get_le<std::uint32_t>();
    std::string name = r.get_bytes(name_len);
    const auto rank = r.get_le<std::uint32_t>();
    if (rank < 1 || rank > 2) throw ConfigError("unsupported parameter rank in checkpoint: " + name);
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t i = 0; i < rank; ++i) dims[rank == 1 ? 1 : i] = r.get_le<std::uint64_t>();
    if (dims[0] > (1u << 28) || dims[1] > (1u << 28))
      throw ConfigError("implausible parameter shape in checkpoint: " + name);
    ad::Matrix value(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    for (Eigen::Index row = 0; row < value.rows(); ++row)
      for (Eigen::Index col = 0; col < value.cols(); ++col)
        value(row, col) = std::bit_cast<double>(r.get_le<std::uint64_t>());
    params.emplace_back(std::move(name), std::move(value));
  }
  return params;
}

}  // namespace dgsan
