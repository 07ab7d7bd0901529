// Generated by scripts/copy-schema.mjs from the primary package; do not edit.
export const appearanceSchema = {
  "title": "appearance-description",
  "type": "object",
  "required": [
    "organ",
    "shape",
    "size",
    "location",
    "texture",
    "boundary",
    "adjacency",
    "free_summary"
  ],
  "additionalProperties": false,
  "properties": {
    "organ": {
      "type": "string",
      "minLength": 1
    },
    "shape": {
      "type": "string",
      "minLength": 1
    },
    "size": {
      "type": "string",
      "minLength": 1
    },
    "location": {
      "type": "string",
      "minLength": 1
    },
    "texture": {
      "type": "string",
      "minLength": 1
    },
    "boundary": {
      "type": "string",
      "minLength": 1
    },
    "adjacency": {
      "type": "array",
      "items": {
        "type": "string",
        "minLength": 1
      }
    },
    "free_summary": {
      "type": "string",
      "minLength": 1
    }
  }
} as const;
