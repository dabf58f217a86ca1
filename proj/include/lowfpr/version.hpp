#pragma once

namespace lowfpr {

inline constexpr const char* kVersion = "0.1.0";

// Bump whenever any prompt template text changes; recorded in run manifests
// so cached scores from older template revisions are never silently reused.
inline constexpr const char* kPromptTemplateVersion = "1";

}  // namespace lowfpr
