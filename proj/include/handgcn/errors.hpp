#pragma once

#include <stdexcept>
#include <string>

namespace handgcn {

// Base for every error raised by the library; callers that don't care about
// the category can catch this one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidPoseError : public Error {
 public:
  using Error::Error;
};

class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ProjectionError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace handgcn
