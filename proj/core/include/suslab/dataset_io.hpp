#pragma once

#include <filesystem>
#include <vector>

#include "suslab/datagen.hpp"

// JSON Lines persistence for generated datasets. Every reader is the exact
// inverse of its writer; token_ids are authoritative over text.
namespace suslab::datagen {

/// One record per line: a "world" config record, a "vocab" record, then
/// "relation", "entity" and "novel" records in world order.
void write_world(const std::filesystem::path& path, const World& world);
World read_world(const std::filesystem::path& path);

/// {"id": n, "token_ids": [...]} per line.
void write_corpus(const std::filesystem::path& path, const std::vector<Sequence>& corpus);
std::vector<Sequence> read_corpus(const std::filesystem::path& path);

void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries);
std::vector<QueryRecord> read_queries(const std::filesystem::path& path);

void write_contexts(const std::filesystem::path& path, const std::vector<ContextRecord>& contexts);
std::vector<ContextRecord> read_contexts(const std::filesystem::path& path);

}  // namespace suslab::datagen
