// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace act {

enum class ErrorKind {
    Configuration,
    InvalidTranscript,
    Precondition,
    TransientBackend,
    DegenerateGeneration,
    ClassifierParse,
    SequenceLength,
    Scoring,
    Numeric,
    Parameter,
    Contract,
    Environment,
    Synthesis,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Categorized failure raised by every module. `kind()` drives CLI exit codes
/// and the exclusion rules in evaluation.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);
    ErrorKind kind() const noexcept { return kind_; }
    /// The message without the category prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Stable 64-bit FNV-1a; used for feature hashing and seed derivation.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// SplitMix64 finalizer, used to derive independent seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// Uniform double in [0,1) from a 64-bit draw, independent of the standard
/// library's distribution implementation.
double unit_interval(std::uint64_t draw);

std::string trim(std::string_view text);
bool is_blank(std::string_view text);
std::string to_lower(std::string_view text);
std::vector<std::string> split_lines(std::string_view text);

/// Lowercased alphanumeric word tokens (punctuation dropped).
std::vector<std::string> word_tokens(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);

} // namespace act
