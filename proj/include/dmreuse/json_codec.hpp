#pragma once

// JSON shapes shared by the HTTP API, the CLI's --json output and the zoo
// manifest. Parsers throw Error(FormatError) on missing or mistyped fields.

#include "json.hpp"

#include "dmreuse/clustering.hpp"
#include "dmreuse/datastore.hpp"
#include "dmreuse/distribution.hpp"
#include "dmreuse/drift.hpp"
#include "dmreuse/error.hpp"
#include "dmreuse/modelzoo.hpp"

namespace dmreuse {

using Json = nlohmann::json;

Json to_json(const DatasetDistribution& d);
DatasetDistribution distribution_from_json(const Json& j);

Json model_manifest_entry(const ModelRecord& m);
ModelRecord model_from_manifest_entry(const Json& j);

Json to_json(const Label& l);
Label label_from_json(const Json& j);

/// `include_embedding` off keeps lookup responses small.
Json to_json(const DataRecord& r, bool include_embedding = true);
DataRecord record_from_json(const Json& j);

Json to_json(const LookupResult& r, bool include_embedding = false);
Json to_json(const PseudoLabelOutcome& o);
Json to_json(const Recommendation& r);
Json to_json(const StoreStats& s);
Json to_json(const ElbowReport& e);
Json to_json(const CertaintyReport& c);
Json to_json(const UpdateSummary& u);

Json error_json(const Error& e);

/// Wraps nlohmann access errors as FormatError naming `what`.
template <typename F>
auto parse_guard(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string(what) + ": " + e.what());
  }
}

}  // namespace dmreuse
