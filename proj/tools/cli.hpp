#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace activemark::cli {

/// Process exit codes of the activemark command.
enum ExitCode : int {
  kOk = 0,            // success, or verdict "watermarked"
  kIndependent = 1,   // verdict "independent"
  kUsage = 2,         // bad command line or invalid argument
  kIncompatible = 3,  // suspect cannot host the key
  kInconclusive = 4,  // detection rate between the two thresholds
  kIoError = 5,       // missing or unreadable file
  kBadConfig = 6,     // malformed config file or environment
  kVersion = 7,       // unsupported file format version
  kIntegrity = 8,     // corrupt or truncated artifact
  kNumeric = 9,       // training diverged or other numeric failure
};

/// Runs one command. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace activemark::cli
