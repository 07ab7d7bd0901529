// Client-side mirror of the server's description validation: required fields,
// exact field names, nonempty strings, string-array adjacency. The UI must
// never submit a revision the server would 422.

import { appearanceSchema } from "./generated/schema.js";

export interface Violation {
  field: string;
  message: string;
}

type PropSpec = { type: string; minLength?: number; items?: { minLength?: number } };

const props = appearanceSchema.properties as Record<string, PropSpec>;
const required = appearanceSchema.required as readonly string[];

export const descriptionFields: string[] = Object.keys(props);

export function validateDescription(payload: unknown): Violation[] {
  const violations: Violation[] = [];
  if (payload === null || typeof payload !== "object" || Array.isArray(payload)) {
    return [{ field: "", message: "payload must be a JSON object" }];
  }
  const obj = payload as Record<string, unknown>;
  for (const name of required) {
    if (!(name in obj)) violations.push({ field: name, message: "required field is missing" });
  }
  for (const name of Object.keys(obj)) {
    if (!(name in props)) violations.push({ field: name, message: "unexpected field" });
  }
  for (const [name, value] of Object.entries(obj)) {
    const spec = props[name];
    if (!spec) continue;
    if (spec.type === "string") {
      if (typeof value !== "string") {
        violations.push({ field: name, message: "must be a string" });
      } else if (value.trim().length < (spec.minLength ?? 0)) {
        violations.push({ field: name, message: "must be nonempty" });
      }
    } else if (spec.type === "array") {
      if (!Array.isArray(value)) {
        violations.push({ field: name, message: "must be a list" });
      } else {
        value.forEach((item, i) => {
          if (typeof item !== "string" || item.trim().length < (spec.items?.minLength ?? 0)) {
            violations.push({ field: name, message: `entry ${i + 1} must be a nonempty string` });
          }
        });
      }
    }
  }
  return violations;
}
