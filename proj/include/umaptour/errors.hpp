#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace umaptour {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error { using Error::Error; };
class DtypeError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class PoolError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class DegenerateInputError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ManipulationError : public Error { using Error::Error; };

/// Non-finite value found while reading an array.
class ValueError : public Error {
public:
    ValueError(const std::string& what, std::size_t index)
        : Error(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class ManifestError : public Error {
public:
    ManifestError(const std::string& layer_id, const std::string& what)
        : Error(layer_id.empty() ? what : "layer '" + layer_id + "': " + what),
          layer_id_(layer_id) {}
    const std::string& layer_id() const noexcept { return layer_id_; }

private:
    std::string layer_id_;
};

class OptimizeError : public Error {
public:
    OptimizeError(const std::string& what, int epoch)
        : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// A pipeline stage failed; carries where it happened.
class PipelineError : public Error {
public:
    PipelineError(std::string stage, std::string layer_id, const std::string& cause)
        : Error("stage '" + stage + "'" +
                (layer_id.empty() ? std::string{} : ", layer '" + layer_id + "'") +
                ": " + cause),
          stage_(std::move(stage)), layer_id_(std::move(layer_id)) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::string& layer_id() const noexcept { return layer_id_; }

private:
    std::string stage_;
    std::string layer_id_;
};

}  // namespace umaptour
