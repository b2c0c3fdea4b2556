#include "pts/error.hpp"

namespace pts {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::UnknownEndpoint: return "UnknownEndpoint";
    case Errc::DuplicateNode: return "DuplicateNode";
    case Errc::InvalidEdge: return "InvalidEdge";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::NotAFile: return "NotAFile";
    case Errc::NotATest: return "NotATest";
    case Errc::MalformedAttempts: return "MalformedAttempts";
    case Errc::DuplicateRecord: return "DuplicateRecord";
    case Errc::UnknownChange: return "UnknownChange";
    case Errc::InvalidChange: return "InvalidChange";
    case Errc::MissingGraphSnapshot: return "MissingGraphSnapshot";
    case Errc::UnknownTarget: return "UnknownTarget";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NoFailures: return "NoFailures";
    case Errc::NoFaultyChanges: return "NoFaultyChanges";
    case Errc::EmptyDependentSets: return "EmptyDependentSets";
    case Errc::NoFailuresOrFlakes: return "NoFailuresOrFlakes";
    case Errc::InvalidInput: return "InvalidInput";
    case Errc::NoFailuresInDataset: return "NoFailuresInDataset";
    case Errc::UnreachableTarget: return "UnreachableTarget";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::TargetNotDependent: return "TargetNotDependent";
    case Errc::InsufficientFailures: return "InsufficientFailures";
    case Errc::NoPriorModel: return "NoPriorModel";
    case Errc::ParseError: return "ParseError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace pts
