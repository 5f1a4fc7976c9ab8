#include "pathe/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace pathe::ad {

namespace {

constexpr std::string_view kHeader = "pathe-ckpt v1\n";

template <typename U>
void put(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw CheckpointError("checkpoint " + path.string() + " is truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kHeader.data(), static_cast<std::streamsize>(kHeader.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put<std::uint64_t>(out, d);
    for (float v : t.value.data()) put<float>(out, v);
  }
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string header(kHeader.size(), '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header.size())) || header != kHeader) {
    throw CheckpointError(path.string() + " is not a pathe-ckpt v1 file");
  }
  std::vector<NamedTensor> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    NamedTensor t;
    const auto name_len = get<std::uint32_t>(in, path);
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) {
      throw CheckpointError("checkpoint " + path.string() + " is truncated");
    }
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    std::vector<float> values(numel(shape));
    for (auto& v : values) v = get<float>(in, path);
    t.value = Tensor<float>(std::move(shape), std::move(values));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

}  // namespace pathe::ad
