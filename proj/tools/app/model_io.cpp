#include "app/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "compose/errors.hpp"

namespace app {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'P', 'S'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(x >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return x;
  }
  double f64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(x);
  }
  void fill(std::span<double> out) {
    for (auto& x : out) x = f64();
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw compose::InvalidArgument("model file '" + path_ + "' is truncated");
  }
  const std::vector<unsigned char>& bytes_;
  const std::string& path_;
  std::size_t pos_ = 4;
};

}  // namespace

void save_model(const std::string& path, const compose::enc::EncoderParams& params, std::size_t num_slots) {
  params.validate();
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_u32(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(params.dim()));
  put_u32(out, static_cast<std::uint32_t>(num_slots));
  put_u32(out, static_cast<std::uint32_t>(params.hidden_dim()));
  for (double x : params.router.w1.storage()) put_f64(out, x);
  for (double x : params.router.v) put_f64(out, x);
  for (double x : params.head.w2.storage()) put_f64(out, x);
  put_f64(out, params.head.log_tau);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw compose::InvalidArgument("cannot write model file '" + path + "'");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw compose::InvalidArgument("failed writing model file '" + path + "'");
}

SavedModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw compose::InvalidArgument("cannot open model file '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw compose::InvalidArgument("'" + path + "' is not a model file (bad magic)");
  Reader r(bytes, path);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw compose::InvalidArgument("model file '" + path + "' has unsupported version " + std::to_string(version));
  const std::size_t d = r.u32(), k = r.u32(), h = r.u32();
  if (d == 0 || k == 0 || h == 0) throw compose::InvalidArgument("model file '" + path + "' has a zero dimension");
  SavedModel m;
  m.num_slots = k;
  m.params.router.w1 = compose::Matrix(h, d);
  m.params.router.v.assign(h, 0.0);
  m.params.head.w2 = compose::Matrix(d, d);
  r.fill(m.params.router.w1.data());
  r.fill(m.params.router.v);
  r.fill(m.params.head.w2.data());
  m.params.head.log_tau = r.f64();
  if (!r.at_end()) throw compose::InvalidArgument("model file '" + path + "' has trailing bytes");
  m.params.validate();
  return m;
}

}  // namespace app
