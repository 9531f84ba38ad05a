#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace enotab {

enum class errc {
  malformed_input,
  duplicate_header_unresolvable,
  index_out_of_range,
  invalid_counts,
  unparsable_condition,
  unknown_column,
  source_mismatch,
  provider_exhausted,
  tree_parse_failure,
  tree_evidence_mismatch,
  leaf_not_usable,
  transport,
  fixture_miss,
  embedder_failure,
  verifier_unavailable,
  dataset_unreadable,
  invalid_config,
};

constexpr std::string_view to_string(errc code) {
  switch (code) {
    case errc::malformed_input: return "MalformedInput";
    case errc::duplicate_header_unresolvable: return "DuplicateHeaderUnresolvable";
    case errc::index_out_of_range: return "IndexOutOfRange";
    case errc::invalid_counts: return "InvalidCounts";
    case errc::unparsable_condition: return "UnparsableCondition";
    case errc::unknown_column: return "UnknownColumn";
    case errc::source_mismatch: return "SourceMismatch";
    case errc::provider_exhausted: return "ProviderExhausted";
    case errc::tree_parse_failure: return "TreeParseFailure";
    case errc::tree_evidence_mismatch: return "TreeEvidenceMismatch";
    case errc::leaf_not_usable: return "LeafNotUsable";
    case errc::transport: return "Transport";
    case errc::fixture_miss: return "FixtureMiss";
    case errc::embedder_failure: return "EmbedderFailure";
    case errc::verifier_unavailable: return "VerifierUnavailable";
    case errc::dataset_unreadable: return "DatasetUnreadable";
    case errc::invalid_config: return "InvalidConfig";
  }
  return "Unknown";
}

/// The single exception type thrown by the library. `code()` names the
/// failure class so callers can branch without string matching.
class error : public std::runtime_error {
public:
  error(errc code, const std::string& what)
    : std::runtime_error(std::string{to_string(code)} + ": " + what), code_{code} {
  }

  errc code() const noexcept {
    return code_;
  }

private:
  errc code_;
};

} // namespace enotab
