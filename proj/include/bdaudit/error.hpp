// Copyright 2026 The bdaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdaudit {

// Base for every error the library throws. Callers that only care about
// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller-supplied argument or configuration violates a precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input data could not be parsed or is internally inconsistent. `line` is the
// 1-based line in the source file, or 0 when no single line is at fault.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Training diverged or otherwise failed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// A serialized artifact (model file, trigger archive) is unreadable.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A black-box query could not be completed (transport exhausted, target gone).
class QueryError : public Error {
 public:
  using Error::Error;
};

// The remote side answered, but with a response we must not retry.
class ProtocolError : public QueryError {
 public:
  ProtocolError(const std::string& what, int status)
      : QueryError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

// An inference run was aborted. Partial outcomes are discarded; only the
// number of completed queries survives.
class InferenceError : public Error {
 public:
  InferenceError(const std::string& what, std::size_t queries_completed)
      : Error(what), queries_completed_(queries_completed) {}
  std::size_t queries_completed() const noexcept { return queries_completed_; }

 private:
  std::size_t queries_completed_;
};

}  // namespace bdaudit
