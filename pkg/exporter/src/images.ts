/**
 * PNG loading and class-structured folder scanning.
 *
 * A folder whose direct subdirectories contain .png files is treated as
 * class-structured: subdirectory names, sorted, become label indices.  A flat
 * folder of .png files yields no labels.
 */

import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'

export interface ImageFolder {
  files: string[]
  labels: Int32Array | null
  classNames: string[] | null
}

export interface DecodedImage {
  width: number
  height: number
  /** HWC, RGB, values in [0, 1] */
  pixels: Float32Array
}

function listPngs(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter(f => f.toLowerCase().endsWith('.png'))
    .sort()
    .map(f => path.join(dir, f))
}

export function scanImageFolder(dir: string): ImageFolder {
  if (!fs.existsSync(dir) || !fs.statSync(dir).isDirectory()) {
    throw new Error(`image directory not found: ${dir}`)
  }
  const subdirs = fs
    .readdirSync(dir)
    .filter(f => fs.statSync(path.join(dir, f)).isDirectory())
    .sort()

  const classDirs = subdirs.filter(s => listPngs(path.join(dir, s)).length > 0)
  if (classDirs.length > 0) {
    const files: string[] = []
    const labels: number[] = []
    classDirs.forEach((cls, index) => {
      for (const file of listPngs(path.join(dir, cls))) {
        files.push(file)
        labels.push(index)
      }
    })
    return { files, labels: Int32Array.from(labels), classNames: classDirs }
  }

  const flat = listPngs(dir)
  if (flat.length === 0) {
    throw new Error(`no .png images under ${dir}`)
  }
  return { files: flat, labels: null, classNames: null }
}

export function decodePng(file: string): DecodedImage {
  const png = PNG.sync.read(fs.readFileSync(file))
  const pixels = new Float32Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    pixels[i * 3] = png.data[i * 4] / 255
    pixels[i * 3 + 1] = png.data[i * 4 + 1] / 255
    pixels[i * 3 + 2] = png.data[i * 4 + 2] / 255
  }
  return { width: png.width, height: png.height, pixels }
}

export function encodePng(width: number, height: number, rgb: Uint8Array): Buffer {
  const png = new PNG({ width, height })
  for (let i = 0; i < width * height; i++) {
    png.data[i * 4] = rgb[i * 3]
    png.data[i * 4 + 1] = rgb[i * 3 + 1]
    png.data[i * 4 + 2] = rgb[i * 3 + 2]
    png.data[i * 4 + 3] = 255
  }
  return PNG.sync.write(png)
}
