#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xtom {

enum class ErrorCode {
  SchemaError,
  CycleError,
  DanglingRef,
  GrammarMismatch,
  MissingDetection,
  NotTerminal,
  NoChildren,
  NoParent,
  NonpositiveSigma,
  EmptyPg,
  ZeroContent,
  NotDetected,
  EmptyLogs,
  NoValidAction,
  ZeroCost,
  PoolTooSmall,
  NonfiniteGradient,
  Exhausted,
  ConflictingAnswer,
  NoGames,
  Range,
  UnknownScene,
  UnknownTask,
  UnknownSession,
  WrongPhase,
  UnknownQuestion,
  TurnLimit,
  NoBubblesYet,
  ConfigError,
  CheckpointMismatch,
  CheckpointError,
  EmptyDir,
  BindError,
  ReplayMismatch,
  IoError,
};

constexpr std::string_view code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::SchemaError: return "SCHEMA_ERROR";
    case ErrorCode::CycleError: return "CYCLE_ERROR";
    case ErrorCode::DanglingRef: return "DANGLING_REF";
    case ErrorCode::GrammarMismatch: return "GRAMMAR_MISMATCH";
    case ErrorCode::MissingDetection: return "MISSING_DETECTION";
    case ErrorCode::NotTerminal: return "NOT_TERMINAL";
    case ErrorCode::NoChildren: return "NO_CHILDREN";
    case ErrorCode::NoParent: return "NO_PARENT";
    case ErrorCode::NonpositiveSigma: return "NONPOSITIVE_SIGMA";
    case ErrorCode::EmptyPg: return "EMPTY_PG";
    case ErrorCode::ZeroContent: return "ZERO_CONTENT";
    case ErrorCode::NotDetected: return "NOT_DETECTED";
    case ErrorCode::EmptyLogs: return "EMPTY_LOGS";
    case ErrorCode::NoValidAction: return "NO_VALID_ACTION";
    case ErrorCode::ZeroCost: return "ZERO_COST";
    case ErrorCode::PoolTooSmall: return "POOL_TOO_SMALL";
    case ErrorCode::NonfiniteGradient: return "NONFINITE_GRADIENT";
    case ErrorCode::Exhausted: return "EXHAUSTED";
    case ErrorCode::ConflictingAnswer: return "CONFLICTING_ANSWER";
    case ErrorCode::NoGames: return "NO_GAMES";
    case ErrorCode::Range: return "RANGE";
    case ErrorCode::UnknownScene: return "UNKNOWN_SCENE";
    case ErrorCode::UnknownTask: return "UNKNOWN_TASK";
    case ErrorCode::UnknownSession: return "UNKNOWN_SESSION";
    case ErrorCode::WrongPhase: return "WRONG_PHASE";
    case ErrorCode::UnknownQuestion: return "UNKNOWN_QUESTION";
    case ErrorCode::TurnLimit: return "TURN_LIMIT";
    case ErrorCode::NoBubblesYet: return "NO_BUBBLES_YET";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::CheckpointMismatch: return "CHECKPOINT_MISMATCH";
    case ErrorCode::CheckpointError: return "CHECKPOINT_ERROR";
    case ErrorCode::EmptyDir: return "EMPTY_DIR";
    case ErrorCode::BindError: return "BIND_ERROR";
    case ErrorCode::ReplayMismatch: return "REPLAY_MISMATCH";
    case ErrorCode::IoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

/// Every failure in the library is reported as an Error carrying one code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace xtom
