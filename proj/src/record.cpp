#include "strokezs/record.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "strokezs/error.hpp"

namespace strokezs {

static_assert(std::endian::native == std::endian::little, "record format assumes a little-endian host");

namespace {

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(float* dst, std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw DataError(std::string("truncated record while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_records(const std::vector<NamedTensor>& tensors) {
  std::string out(kRecordMagic, 4);
  put<std::uint32_t>(out, kRecordVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw UsageError("tensor name too long: " + name.substr(0, 32) + "...");
    if (t.rank() > 0xff) throw UsageError("tensor rank too large for '" + name + "'");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(float));
  }
  return out;
}

std::vector<NamedTensor> decode_records(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(4, "magic") != std::string(kRecordMagic, 4)) {
    throw DataError("not a record file (bad magic bytes, expected SZS1 version " +
                    std::to_string(kRecordVersion) + ")");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kRecordVersion) {
    throw DataError("unsupported record version " + std::to_string(version) + " (expected " +
                    std::to_string(kRecordVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>("name length");
    std::string name = in.get_string(name_len, "tensor name");
    const auto rank = in.get<std::uint8_t>("rank");
    nn::Shape shape;
    for (int r = 0; r < rank; ++r) shape.push_back(static_cast<int>(in.get<std::uint32_t>("dimension")));
    nn::Tensor t(shape);
    in.get_floats(t.ptr(), t.size(), "tensor data");
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!in.done()) throw DataError("trailing bytes after last record");
  return out;
}

void write_records(const std::string& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_records(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

std::vector<NamedTensor> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_records(bytes);
  } catch (const DataError& err) {
    throw DataError(path + ": " + err.what());
  }
}

}  // namespace strokezs
