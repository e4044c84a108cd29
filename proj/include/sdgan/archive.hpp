#pragma once

#include <string>
#include <utility>
#include <vector>

namespace sdgan {

using ArchiveEntry = std::pair<std::string, std::string>;  // path, bytes

// POSIX ustar with fixed metadata (mode 0644, mtime 0, uid/gid 0), so equal
// inputs give byte-identical archives. Paths are limited to 100 bytes.
std::string write_tar(const std::vector<ArchiveEntry>& entries);

// Regular files only, in archive order. Throws FormatError.
std::vector<ArchiveEntry> read_tar(const std::string& bytes);

}  // namespace sdgan
