#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nrsfm {

// Base class for every failure raised by the library. Callers that only care
// about "something went wrong" catch this; the subclasses carry the context.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, std::string input)
      : Error(what), input_(std::move(input)) {}
  const std::string& input() const { return input_; }

 private:
  std::string input_;
};

class DegenerateCamera : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : Error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

class IllPosedDictionary : public Error {
 public:
  using Error::Error;
};

class GradientInstability : public Error {
 public:
  GradientInstability(const std::string& what, long frame = -1)
      : Error(what), frame_(frame) {}
  long frame() const { return frame_; }

 private:
  long frame_;
};

class PoisonedStep : public Error {
 public:
  using Error::Error;
};

class TrainingCollapse : public Error {
 public:
  TrainingCollapse(const std::string& what, std::string last_checkpoint)
      : Error(what), last_checkpoint_(std::move(last_checkpoint)) {}
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::string last_checkpoint_;
};

class EmptyHistory : public Error {
 public:
  using Error::Error;
};

class InsufficientObservations : public Error {
 public:
  InsufficientObservations(const std::string& what, std::size_t frame)
      : Error(what), frame_(frame) {}
  std::size_t frame() const { return frame_; }

 private:
  std::size_t frame_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DegenerateAlignment : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nrsfm
