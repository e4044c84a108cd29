#include "sdgan/archive.hpp"

#include <cstdio>
#include <cstring>

#include "sdgan/errors.hpp"

namespace sdgan {

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, unsigned long long value) {
  // width - 1 digits followed by NUL
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), value);
}

unsigned long long get_octal(const char* field, std::size_t width) {
  unsigned long long v = 0;
  for (std::size_t i = 0; i < width && field[i]; ++i) {
    if (field[i] == ' ') continue;
    if (field[i] < '0' || field[i] > '7') fail(ErrorKind::FormatError, "tar header has a non-octal field");
    v = v * 8 + static_cast<unsigned long long>(field[i] - '0');
  }
  return v;
}

unsigned checksum(const char* header) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i)
    sum += (i >= 148 && i < 156) ? static_cast<unsigned>(' ') : static_cast<unsigned char>(header[i]);
  return sum;
}

}  // namespace

std::string write_tar(const std::vector<ArchiveEntry>& entries) {
  std::string out;
  for (const auto& [path, bytes] : entries) {
    require(!path.empty() && path.size() <= 100, ErrorKind::InvalidArgument, "tar path must be 1..100 bytes: " + path);
    char h[kBlock] = {};
    std::memcpy(h, path.data(), path.size());
    put_octal(h + 100, 8, 0644);
    put_octal(h + 108, 8, 0);
    put_octal(h + 116, 8, 0);
    put_octal(h + 124, 12, bytes.size());
    put_octal(h + 136, 12, 0);
    h[156] = '0';
    std::memcpy(h + 257, "ustar", 6);
    h[263] = '0';
    h[264] = '0';
    std::snprintf(h + 148, 8, "%06o", checksum(h));
    h[155] = ' ';
    out.append(h, kBlock);
    out.append(bytes);
    out.append((kBlock - bytes.size() % kBlock) % kBlock, '\0');
  }
  out.append(2 * kBlock, '\0');
  return out;
}

std::vector<ArchiveEntry> read_tar(const std::string& bytes) {
  std::vector<ArchiveEntry> out;
  std::size_t pos = 0;
  while (pos + kBlock <= bytes.size()) {
    const char* h = bytes.data() + pos;
    bool empty = true;
    for (std::size_t i = 0; i < kBlock && empty; ++i) empty = h[i] == 0;
    if (empty) return out;
    if (get_octal(h + 148, 8) != checksum(h)) fail(ErrorKind::FormatError, "tar header checksum mismatch");
    const std::string name(h, strnlen(h, 100));
    const auto size = static_cast<std::size_t>(get_octal(h + 124, 12));
    pos += kBlock;
    if (pos + size > bytes.size()) fail(ErrorKind::FormatError, "tar entry '" + name + "' is truncated");
    if (h[156] == '0' || h[156] == 0) out.emplace_back(name, bytes.substr(pos, size));
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  fail(ErrorKind::FormatError, "tar archive lacks its end marker");
}

}  // namespace sdgan
