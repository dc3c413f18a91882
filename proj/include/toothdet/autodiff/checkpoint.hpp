#pragma once

#include <string>

#include "toothdet/autodiff/params.hpp"

namespace toothdet::ad {

/// Binary parameter container. Layout: magic "TPCKPT1", u8 format version,
/// u32 entry count, then per parameter: u32 name length, name bytes, u32
/// rank, u32 extents, raw values. All integers and the 64-bit float payload
/// are little-endian regardless of host order, so files are portable and
/// round-trip bit-exactly.
void save_checkpoint(const std::string& path, const ParamStore& params);

/// Loads values into an already-built store. The file must contain exactly
/// the registered parameter set with matching shapes; anything else is a
/// different architecture and is rejected.
void load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace toothdet::ad
