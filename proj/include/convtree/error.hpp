#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace convtree {

enum class ErrorKind {
  // ingestion
  UnknownParent,
  DuplicateId,
  CycleDetected,
  SchemaViolation,
  UnknownId,
  // numerics
  NonFiniteInput,
  DomainError,
  ZeroVector,
  DegenerateVariance,
  NonScalarLoss,
  ShapeMismatch,
  PathTooLong,
  // learning
  EmptyLabelSet,
  NonFinite,
  MissingClass,
  NonFiniteLoss,
  TooFewTrees,
  EmptyEdgeSet,
  NoLabeledReplies,
  EmptySet,
  NonPositiveElapsed,
  IndexOutOfRange,
  EmptyData,
  NonFiniteObjective,
  // analytics
  UnlabeledNodes,
  TooFewPosts,
  DegenerateGroups,
  // plumbing
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace convtree
