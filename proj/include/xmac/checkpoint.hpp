#pragma once

#include <string>

#include "xmac/model.hpp"

namespace xmac {

/// Checkpoint layout, bit-exact:
///   bytes 0-3   magic "XMAC"
///   bytes 4-7   little-endian u32 version (= 1)
///   bytes 8-11  little-endian u32 header length L
///   L bytes     UTF-8 JSON {config, tensors:[{name, shape, byte_offset, byte_len}]}
///   then        contiguous little-endian float32 blobs in manifest order
/// Parameters come first in registration order, then batchnorm running
/// statistics; offsets are relative to the end of the header.
void save_checkpoint(const Model& model, const std::string& path);

/// Rebuilds the model from the embedded config and restores every tensor
/// bit-exactly. When `expected_classes` is >= 0 a checkpoint declaring a
/// different class count is rejected with a config-conflict error.
Model load_checkpoint(const std::string& path, int expected_classes = -1);

}  // namespace xmac
