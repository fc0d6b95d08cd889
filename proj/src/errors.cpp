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

#include "patchforge/errors.hpp"

namespace patchforge {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::DegenerateQuad: return "DegenerateQuad";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::VanishingDenominator: return "VanishingDenominator";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::DatasetTooSmall: return "DatasetTooSmall";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::MissingTarget: return "MissingTarget";
    case ErrorKind::NoEligibleClass: return "NoEligibleClass";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MalformedAnnotation: return "MalformedAnnotation";
    case ErrorKind::LandmarkOutOfBounds: return "LandmarkOutOfBounds";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoFailure: return "IoFailure";
    }
    return "UnknownError";
}

} // namespace patchforge
