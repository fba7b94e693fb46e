#include "cst/error.hpp"

namespace cst {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_arg: return "InvalidArg";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::not_symmetric: return "NotSymmetric";
    case Errc::near_singular: return "NearSingular";
    case Errc::rank_deficient: return "RankDeficient";
    case Errc::invalid_covariance: return "InvalidCovariance";
    case Errc::negative_arg: return "NegativeArg";
    case Errc::nonpositive_step: return "NonpositiveStep";
    case Errc::site_unreachable: return "SiteUnreachable";
    case Errc::no_eligible_sites: return "NoEligibleSites";
    case Errc::diverged: return "Diverged";
    case Errc::non_finite: return "NonFinite";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::io_error: return "IoError";
    case Errc::schema_mismatch: return "SchemaMismatch";
    case Errc::empty_site: return "EmptySite";
    case Errc::bad_hypothesis: return "BadHypothesis";
    case Errc::protocol_error: return "ProtocolError";
  }
  return "Unknown";
}

}  // namespace cst
