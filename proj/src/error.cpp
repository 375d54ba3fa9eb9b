#include "convtree/error.hpp"

namespace convtree {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownParent: return "UnknownParent";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::CycleDetected: return "CycleDetected";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::NonScalarLoss: return "NonScalarLoss";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::PathTooLong: return "PathTooLong";
    case ErrorKind::EmptyLabelSet: return "EmptyLabelSet";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::MissingClass: return "MissingClass";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::TooFewTrees: return "TooFewTrees";
    case ErrorKind::EmptyEdgeSet: return "EmptyEdgeSet";
    case ErrorKind::NoLabeledReplies: return "NoLabeledReplies";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::NonPositiveElapsed: return "NonPositiveElapsed";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::EmptyData: return "EmptyData";
    case ErrorKind::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorKind::UnlabeledNodes: return "UnlabeledNodes";
    case ErrorKind::TooFewPosts: return "TooFewPosts";
    case ErrorKind::DegenerateGroups: return "DegenerateGroups";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace convtree
