/* Copyright 2026 The trajtta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace trajtta {

// Failure categories. The CLI maps each category to a distinct exit code.
enum class ErrorCategory {
  kConfig = 2,
  kShape = 3,
  kIo = 4,
  kDomain = 5,
  kTraining = 6,
  kArgument = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kConfig, "configuration error: " + what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ErrorCategory::kShape, "shape error: " + what) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& reason)
      : Error(ErrorCategory::kIo, "I/O error: " + path + ": " + reason),
        path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorCategory::kDomain, "domain error: " + what) {}
};

// Raised by optimization loops; carries the iteration that failed.
class TrainingError : public Error {
 public:
  TrainingError(long step, const std::string& what)
      : Error(ErrorCategory::kTraining,
              "training error at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what)
      : Error(ErrorCategory::kArgument, "argument error: " + what) {}
};

}  // namespace trajtta
