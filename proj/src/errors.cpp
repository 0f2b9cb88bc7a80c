#include "twuq/errors.hpp"

namespace twuq {

ExitCode exit_code(const std::exception& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::Config;
    if (dynamic_cast<const FingerprintError*>(&e)) return ExitCode::Fingerprint;
    if (dynamic_cast<const TrainingError*>(&e)) return ExitCode::Training;
    if (dynamic_cast<const IoError*>(&e)) return ExitCode::Io;
    return ExitCode::Other;
}

}  // namespace twuq
