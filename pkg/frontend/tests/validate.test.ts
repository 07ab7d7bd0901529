import { describe, expect, it } from "vitest";
import { descriptionFields, validateDescription } from "../src/validate.js";

function validPayload(overrides: Record<string, unknown> = {}) {
  return {
    organ: "spleen",
    shape: "oval",
    size: "moderate",
    location: "left upper quadrant",
    texture: "homogeneous",
    boundary: "sharp",
    adjacency: ["stomach", "kidney"],
    free_summary: "A moderate oval structure.",
    ...overrides,
  };
}

describe("validateDescription", () => {
  it("accepts a schema-conformant payload", () => {
    expect(validateDescription(validPayload())).toEqual([]);
  });

  it("covers every schema field", () => {
    expect(descriptionFields.sort()).toEqual(
      ["adjacency", "boundary", "free_summary", "location", "organ", "shape", "size", "texture"].sort()
    );
  });

  it("flags an empty required string field", () => {
    const violations = validateDescription(validPayload({ shape: "" }));
    expect(violations).toHaveLength(1);
    expect(violations[0].field).toBe("shape");
  });

  it("treats whitespace-only strings as empty", () => {
    expect(validateDescription(validPayload({ texture: "   " }))).toHaveLength(1);
  });

  it("flags a missing field by name", () => {
    const payload = validPayload() as Record<string, unknown>;
    delete payload.boundary;
    const violations = validateDescription(payload);
    expect(violations.map((v) => v.field)).toContain("boundary");
  });

  it("flags unexpected fields", () => {
    const violations = validateDescription(validPayload({ extra: "x" }));
    expect(violations.map((v) => v.field)).toContain("extra");
  });

  it("flags non-string adjacency entries", () => {
    const violations = validateDescription(validPayload({ adjacency: ["ok", 7] }));
    expect(violations).toHaveLength(1);
    expect(violations[0].field).toBe("adjacency");
  });

  it("allows an empty adjacency list (minLength applies to items)", () => {
    expect(validateDescription(validPayload({ adjacency: [] }))).toEqual([]);
  });

  it("rejects non-object payloads", () => {
    expect(validateDescription("nope").length).toBeGreaterThan(0);
    expect(validateDescription([1, 2]).length).toBeGreaterThan(0);
  });
});
