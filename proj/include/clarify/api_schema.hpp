#pragma once

// JSON Schema (draft 2020-12) for every gateway response body, one $defs
// entry per response kind. Served at GET /schema.

namespace clarify {

inline constexpr const char* kApiSchema = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "$id": "clarify-gateway-api",
  "title": "clarify gateway responses",
  "$defs": {
    "bbox": {
      "type": "object",
      "additionalProperties": false,
      "required": ["x_min", "y_min", "x_max", "y_max"],
      "properties": {
        "x_min": {"type": "number"}, "y_min": {"type": "number"},
        "x_max": {"type": "number"}, "y_max": {"type": "number"}
      }
    },
    "phase": {"enum": ["awaiting_instruction", "awaiting_clarification", "resolved", "failed", "committed"]},
    "box_id": {"type": "integer", "minimum": 0, "maximum": 3},
    "resolution": {
      "type": "object",
      "additionalProperties": false,
      "required": ["object_id", "box_id"],
      "properties": {"object_id": {"type": "string"}, "box_id": {"$ref": "#/$defs/box_id"}}
    },
    "candidate": {
      "type": "object",
      "additionalProperties": false,
      "required": ["object_id", "score", "bbox"],
      "properties": {"object_id": {"type": "string"}, "score": {"type": "number"}, "bbox": {"$ref": "#/$defs/bbox"}}
    },
    "box_candidate": {
      "type": "object",
      "additionalProperties": false,
      "required": ["box_id", "prob"],
      "properties": {"box_id": {"$ref": "#/$defs/box_id"}, "prob": {"type": "number", "minimum": 0, "maximum": 1}}
    },
    "scene_summary": {
      "type": "object",
      "additionalProperties": false,
      "required": ["scene_id", "width", "height", "boxes", "objects"],
      "properties": {
        "scene_id": {"type": "string"},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "boxes": {
          "type": "array", "minItems": 4, "maxItems": 4,
          "items": {
            "type": "object",
            "additionalProperties": false,
            "required": ["box_id", "name", "bbox"],
            "properties": {"box_id": {"$ref": "#/$defs/box_id"}, "name": {"type": "string"}, "bbox": {"$ref": "#/$defs/bbox"}}
          }
        },
        "objects": {
          "type": "array",
          "items": {
            "type": "object",
            "additionalProperties": false,
            "required": ["object_id", "bbox", "thumbnail_png_base64"],
            "properties": {
              "object_id": {"type": "string"},
              "bbox": {"$ref": "#/$defs/bbox"},
              "thumbnail_png_base64": {"type": ["string", "null"]}
            }
          }
        }
      }
    },
    "scene_document": {
      "type": "object",
      "additionalProperties": false,
      "required": ["scene", "image_png_base64"],
      "properties": {
        "scene": {
          "type": "object",
          "additionalProperties": false,
          "required": ["scene_id", "width", "height", "boxes", "objects"],
          "properties": {
            "scene_id": {"type": "string"},
            "width": {"type": "integer"},
            "height": {"type": "integer"},
            "boxes": {"type": "array", "items": {"$ref": "#/$defs/bbox"}},
            "objects": {
              "type": "array",
              "items": {
                "type": "object",
                "additionalProperties": false,
                "required": ["object_id", "bbox", "instructions"],
                "properties": {
                  "object_id": {"type": "string"},
                  "bbox": {"$ref": "#/$defs/bbox"},
                  "features": {"type": "array", "items": {"type": "number"}},
                  "attributes": {"type": "object", "additionalProperties": {"type": "string"}},
                  "instructions": {
                    "type": "array",
                    "items": {
                      "type": "object",
                      "additionalProperties": false,
                      "required": ["text", "destination_box"],
                      "properties": {
                        "text": {"type": "string"},
                        "destination_box": {"$ref": "#/$defs/box_id"},
                        "referents": {"type": "array", "items": {"type": "string"}},
                        "ambiguous": {"type": "boolean"},
                        "constraints": {"type": "object"}
                      }
                    }
                  }
                }
              }
            }
          }
        },
        "image_png_base64": {"type": ["string", "null"]}
      }
    },
    "scene_list": {
      "type": "object",
      "additionalProperties": false,
      "required": ["scenes"],
      "properties": {
        "scenes": {
          "type": "array",
          "items": {
            "type": "object",
            "additionalProperties": false,
            "required": ["scene_id", "object_count"],
            "properties": {"scene_id": {"type": "string"}, "object_count": {"type": "integer", "minimum": 0}}
          }
        }
      }
    },
    "session_created": {
      "type": "object",
      "additionalProperties": false,
      "required": ["session_id", "phase", "feedback_budget", "scene"],
      "properties": {
        "session_id": {"type": "string", "minLength": 1},
        "phase": {"const": "awaiting_instruction"},
        "feedback_budget": {"type": "integer", "minimum": 0},
        "scene": {"$ref": "#/$defs/scene_summary"}
      }
    },
    "utterance_response": {
      "type": "object",
      "additionalProperties": false,
      "required": ["session_id", "phase", "feedback_used", "candidates", "box_candidates"],
      "properties": {
        "session_id": {"type": "string"},
        "phase": {"enum": ["awaiting_clarification", "resolved", "failed"]},
        "feedback_used": {"type": "integer", "minimum": 0},
        "candidates": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/candidate"}},
        "box_candidates": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/box_candidate"}},
        "question": {"type": "string", "minLength": 1},
        "resolution": {"$ref": "#/$defs/resolution"}
      }
    },
    "commit_response": {
      "type": "object",
      "additionalProperties": false,
      "required": ["session_id", "phase", "removed_object_id", "box_id", "object_count"],
      "properties": {
        "session_id": {"type": "string"},
        "phase": {"const": "committed"},
        "removed_object_id": {"type": "string"},
        "box_id": {"$ref": "#/$defs/box_id"},
        "object_count": {"type": "integer", "minimum": 0}
      }
    },
    "prompt_event": {
      "type": "object",
      "additionalProperties": false,
      "required": ["question_text", "highlighted_object_ids", "highlighted_box_ids"],
      "properties": {
        "question_text": {"type": "string"},
        "highlighted_object_ids": {"type": "array", "items": {"type": "string"}},
        "highlighted_box_ids": {"type": "array", "items": {"$ref": "#/$defs/box_id"}}
      }
    },
    "transcript_event": {
      "oneOf": [
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["event", "session_id", "scene_id", "candidate_ids", "object_count"],
          "properties": {
            "event": {"const": "created"},
            "session_id": {"type": "string"},
            "scene_id": {"type": "string"},
            "candidate_ids": {"type": "array", "items": {"type": "string"}},
            "object_count": {"type": "integer"}
          }
        },
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["event", "text", "turn_index", "object_scores", "box_probs", "object_candidates",
                       "box_candidates", "phase", "feedback_used", "prompt", "resolution"],
          "properties": {
            "event": {"const": "utterance"},
            "text": {"type": "string"},
            "turn_index": {"type": "integer", "minimum": 0},
            "object_scores": {
              "type": "array",
              "items": {
                "type": "object",
                "additionalProperties": false,
                "required": ["object_id", "turn", "total"],
                "properties": {"object_id": {"type": "string"}, "turn": {"type": "number"}, "total": {"type": "number"}}
              }
            },
            "box_probs": {"type": "array", "minItems": 4, "maxItems": 4, "items": {"type": "number"}},
            "object_candidates": {"type": "array", "items": {"type": "string"}},
            "box_candidates": {"type": "array", "items": {"$ref": "#/$defs/box_id"}},
            "phase": {"$ref": "#/$defs/phase"},
            "feedback_used": {"type": "integer", "minimum": 0},
            "prompt": {"oneOf": [{"type": "null"}, {"$ref": "#/$defs/prompt_event"}]},
            "resolution": {"oneOf": [{"type": "null"}, {"$ref": "#/$defs/resolution"}]}
          }
        },
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["event", "object_id", "box_id", "correct"],
          "properties": {
            "event": {"const": "commit"},
            "object_id": {"type": "string"},
            "box_id": {"$ref": "#/$defs/box_id"},
            "correct": {"type": ["boolean", "null"]}
          }
        }
      ]
    },
    "session_state": {
      "type": "object",
      "additionalProperties": false,
      "required": ["session_id", "scene_id", "phase", "feedback_used", "feedback_budget", "object_count", "objects",
                   "candidates", "box_candidates", "question", "resolution", "transcript"],
      "properties": {
        "session_id": {"type": "string"},
        "scene_id": {"type": "string"},
        "phase": {"$ref": "#/$defs/phase"},
        "feedback_used": {"type": "integer", "minimum": 0},
        "feedback_budget": {"type": "integer", "minimum": 0},
        "object_count": {"type": "integer", "minimum": 0},
        "objects": {
          "type": "array",
          "items": {
            "type": "object",
            "additionalProperties": false,
            "required": ["object_id", "bbox"],
            "properties": {"object_id": {"type": "string"}, "bbox": {"$ref": "#/$defs/bbox"}}
          }
        },
        "candidates": {"type": "array", "items": {"$ref": "#/$defs/candidate"}},
        "box_candidates": {"type": "array", "items": {"$ref": "#/$defs/box_candidate"}},
        "question": {"type": ["string", "null"]},
        "resolution": {"oneOf": [{"type": "null"}, {"$ref": "#/$defs/resolution"}]},
        "transcript": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/transcript_event"}}
      }
    },
    "health": {
      "type": "object",
      "additionalProperties": false,
      "required": ["status", "scene_count", "live_sessions", "vocabulary_size", "encoder"],
      "properties": {
        "status": {"const": "ok"},
        "scene_count": {"type": "integer", "minimum": 0},
        "live_sessions": {"type": "integer", "minimum": 0},
        "vocabulary_size": {"type": "integer", "minimum": 1},
        "encoder": {
          "type": "object",
          "additionalProperties": false,
          "required": ["embedding_dim", "hidden_dim", "lstm_layers", "joint_dim"],
          "properties": {
            "embedding_dim": {"type": "integer"}, "hidden_dim": {"type": "integer"},
            "lstm_layers": {"type": "integer"}, "joint_dim": {"type": "integer"}
          }
        }
      }
    },
    "error": {
      "type": "object",
      "additionalProperties": false,
      "required": ["error"],
      "properties": {
        "error": {
          "type": "object",
          "additionalProperties": false,
          "required": ["code", "message"],
          "properties": {
            "code": {
              "enum": ["invalid_request", "malformed_json", "not_found", "method_not_allowed", "scene_not_found",
                       "invalid_scene", "session_not_found", "session_expired", "protocol_violation",
                       "not_resolved", "already_committed", "empty_instruction", "no_ambiguity", "empty_scene",
                       "internal_error"]
            },
            "message": {"type": "string"}
          }
        }
      }
    }
  }
})json";

}  // namespace clarify
