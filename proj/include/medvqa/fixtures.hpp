#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "medvqa/asr.hpp"
#include "medvqa/dataset.hpp"

namespace medvqa {

/// Reference manifest shape: 866 samples, MRI/CT/X-ray = 194/143/529,
/// train 162/122/432, test 32/21/97. Content is synthetic and deterministic.
DatasetManifest reference_manifest();

/// Count spec matching reference_manifest() (JSONL text).
std::string reference_count_spec();

/// Small deterministic test-split manifest for pipeline demos.
DatasetManifest demo_manifest(std::size_t n = 20);

/// Reference and hypothesis transcripts for the demo questions, with a few
/// recognition slips.
std::vector<TranscriptPair> demo_transcripts(const DatasetManifest& manifest);

/// Writes manifest.jsonl, counts.jsonl, transcripts.jsonl and placeholder
/// images under `root`. `reference` selects the 866-sample manifest.
void write_fixture_dataset(const std::filesystem::path& root, bool reference, std::size_t demo_size = 20);

}  // namespace medvqa
