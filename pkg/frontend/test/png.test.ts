import { deflateSync, inflateSync } from "node:zlib";

import { describe, expect, it } from "vitest";

import {
  base64ToBytes,
  bytesToBase64,
  decodePng,
  encodeGrayPng,
  maskToPngBase64,
  pngBase64ToMask,
} from "../src/png.js";
import { rasterizeStrokes } from "../src/mask.js";

const nodeInflate = (data: Uint8Array) => new Uint8Array(inflateSync(data));

describe("gray PNG round trip", () => {
  it("decodes its own stored-deflate output without an inflater", () => {
    const pixels = new Uint8Array(24 * 17).map((_, i) => (i * 37) % 256);
    const png = encodeGrayPng(pixels, 24, 17);
    const back = decodePng(png);
    expect(back.width).toBe(24);
    expect(back.height).toBe(17);
    expect(back.channels).toBe(1);
    expect(back.pixels).toEqual(pixels);
  });

  it("rejects mismatched dimensions", () => {
    expect(() => encodeGrayPng(new Uint8Array(10), 4, 4)).toThrow(/pixel count/);
  });

  it("survives re-compression by a real deflate", () => {
    // rebuild the IDAT with node's compressed deflate, then decode with an
    // injected inflater, proving the chunk walker and unfilter logic
    const pixels = new Uint8Array(33 * 21).map((_, i) => (i * 11) % 256);
    const png = encodeGrayPng(pixels, 33, 21);
    const raw: number[] = [];
    for (let y = 0; y < 21; y++) {
      raw.push(0, ...pixels.subarray(y * 33, (y + 1) * 33));
    }
    const idat = new Uint8Array(deflateSync(Buffer.from(raw)));
    // splice: signature + IHDR stay, IDAT replaced
    const ihdrEnd = 8 + 12 + 13;
    const out = [...png.subarray(0, ihdrEnd)];
    const len = idat.length;
    out.push((len >>> 24) & 0xff, (len >>> 16) & 0xff, (len >>> 8) & 0xff, len & 0xff);
    const typeAndData = [0x49, 0x44, 0x41, 0x54, ...idat];
    out.push(...typeAndData);
    // crc over type+data
    const crcInput = new Uint8Array(typeAndData);
    let c = 0xffffffff;
    const table = new Uint32Array(256).map((_, n) => {
      let v = n;
      for (let k = 0; k < 8; k++) v = v & 1 ? 0xedb88320 ^ (v >>> 1) : v >>> 1;
      return v >>> 0;
    });
    for (const b of crcInput) c = table[(c ^ b) & 0xff] ^ (c >>> 8);
    c = (c ^ 0xffffffff) >>> 0;
    out.push((c >>> 24) & 0xff, (c >>> 16) & 0xff, (c >>> 8) & 0xff, c & 0xff);
    out.push(0, 0, 0, 0, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82);

    const decoded = decodePng(new Uint8Array(out), nodeInflate);
    expect(decoded.pixels).toEqual(pixels);
  });

  it("refuses compressed input without an inflater", () => {
    const pixels = new Uint8Array(16);
    const raw = Buffer.from([0, ...pixels.subarray(0, 4), 0, ...pixels.subarray(4, 8), 0, ...pixels.subarray(8, 12), 0, ...pixels.subarray(12)]);
    void raw;
    // craft is exercised above; here just confirm the error path
    const png = encodeGrayPng(pixels, 4, 4);
    const tampered = new Uint8Array(png);
    // flip the deflate block header to "fixed huffman"
    const idatStart = 8 + 12 + 13 + 8;
    tampered[idatStart + 2] |= 0x02;
    expect(() => decodePng(tampered)).toThrow(/injected inflate/);
  });
});

describe("mask wire format", () => {
  it("export then import reproduces the raster exactly", () => {
    const raster = rasterizeStrokes(48, 48, [
      { points: [[5, 5], [40, 22], [12, 44]], width: 9 },
    ]);
    const b64 = maskToPngBase64(raster, 48, 48);
    const back = pngBase64ToMask(b64);
    expect(back.width).toBe(48);
    expect(back.height).toBe(48);
    expect(back.raster).toEqual(raster);
  });

  it("base64 helpers round trip", () => {
    const bytes = new Uint8Array([0, 1, 2, 250, 251, 255]);
    expect(base64ToBytes(bytesToBase64(bytes))).toEqual(bytes);
  });
});
