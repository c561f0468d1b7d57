#pragma once

// The `moledit` command line: corpus generation, pretraining, benchmark
// construction, editing, evaluation and rationale reports.

#include <ostream>
#include <string>
#include <vector>

namespace moledit::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kInvariantError = 4;

/// Runs one invocation; `args` includes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Git blob hash ("blob <size>\0" + bytes, SHA-1) as lowercase hex.
std::string git_blob_hash(const std::string& bytes);
/// Blob hash of a file's contents. Throws IoError.
std::string file_hash(const std::string& path);

}  // namespace moledit::cli
