#include "shadowprice/error.hpp"

namespace shadowprice {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonpositiveProbability: return "NonpositiveProbability";
    case ErrorCode::ChildSumMismatch: return "ChildSumMismatch";
    case ErrorCode::OrphanAtom: return "OrphanAtom";
    case ErrorCode::UnorderedLevel: return "UnorderedLevel";
    case ErrorCode::LevelMismatch: return "LevelMismatch";
    case ErrorCode::InvalidCostRate: return "InvalidCostRate";
    case ErrorCode::InvalidMarket: return "InvalidMarket";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonpositiveNumeraire: return "NonpositiveNumeraire";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::Unbounded: return "Unbounded";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::DomainEmpty: return "DomainEmpty";
    case ErrorCode::NonnegativeNu: return "NonnegativeNu";
    case ErrorCode::BoundsViolation: return "BoundsViolation";
    case ErrorCode::NegativeLambda: return "NegativeLambda";
    case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace shadowprice
