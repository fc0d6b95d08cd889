// Copyright 2026 The PatchForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace patchforge {

enum class ErrorKind {
    // geometry
    DegenerateQuad,
    SingularSystem,
    VanishingDenominator,
    DegenerateConfiguration,
    // sampler / tensors
    ShapeMismatch,
    // embednet
    CorruptCheckpoint,
    UnsupportedVersion,
    InvalidLabel,
    DatasetTooSmall,
    NonConvergence,
    // losses / attack
    EmptyBatch,
    EmptySplit,
    MissingTarget,
    NoEligibleClass,
    // pipeline
    MissingFile,
    MalformedAnnotation,
    LandmarkOutOfBounds,
    DuplicateId,
    LayoutMismatch,
    // cli / io
    InvalidArgument,
    IoFailure,
};

const char* error_kind_name(ErrorKind kind);

/// All recoverable failures are reported as Error; .kind() identifies the
/// contract that was violated and what() carries the context.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace patchforge
