// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace streetgs {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define STREETGS_DEFINE_ERROR(Name)                                    \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

// dataset and file handling
STREETGS_DEFINE_ERROR(MissingFile);
STREETGS_DEFINE_ERROR(MalformedPose);
STREETGS_DEFINE_ERROR(DimensionMismatch);
STREETGS_DEFINE_ERROR(InvalidRate);
STREETGS_DEFINE_ERROR(IoError);
STREETGS_DEFINE_ERROR(VersionMismatch);
STREETGS_DEFINE_ERROR(ConfigError);

// geometry
STREETGS_DEFINE_ERROR(BehindCamera);
STREETGS_DEFINE_ERROR(NonPositiveDepth);

// lidar
STREETGS_DEFINE_ERROR(EmptyResult);
STREETGS_DEFINE_ERROR(NoValidPixels);

// gaussians / rendering / losses
STREETGS_DEFINE_ERROR(EmptyCloud);
STREETGS_DEFINE_ERROR(MismatchedForward);
STREETGS_DEFINE_ERROR(ShapeMismatch);

// guidance
STREETGS_DEFINE_ERROR(ProviderUnavailable);
STREETGS_DEFINE_ERROR(ProviderTimeout);
STREETGS_DEFINE_ERROR(ProtocolError);

#undef STREETGS_DEFINE_ERROR

}  // namespace streetgs
