// Copyright 2026 The cexplain Authors.
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

#ifndef CEXPLAIN_ERROR_H_
#define CEXPLAIN_ERROR_H_

#include <stdexcept>
#include <string>

namespace cexplain {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model file and forward-pass failures. layer_index is -1 when the problem
// is not attributable to a single layer.
class ModelError : public Error {
 public:
  ModelError(int layer_index, const std::string& what)
      : Error(layer_index >= 0
                  ? "layer " + std::to_string(layer_index) + ": " + what
                  : what),
        layer_index_(layer_index) {}
  int layer_index() const { return layer_index_; }

 private:
  int layer_index_;
};

class RelevanceError : public Error {
 public:
  using Error::Error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// A file that a manifest refers to does not exist.
class MissingAssetError : public Error {
 public:
  explicit MissingAssetError(const std::string& file)
      : Error("missing asset file: " + file), file_(file) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

// Chat-model failures. AuthError is never retried.
class LlmError : public Error {
 public:
  using Error::Error;
};

class AuthError : public LlmError {
 public:
  using LlmError::LlmError;
};

class MalformedResponseError : public LlmError {
 public:
  using LlmError::LlmError;
};

}  // namespace cexplain

#endif  // CEXPLAIN_ERROR_H_
