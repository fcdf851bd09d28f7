/**
 * Tensor container writer/reader matching the oodscore on-disk format:
 * manifest.json plus one headerless binary per tensor, little-endian
 * float32 ("f32") or int32 ("i32"), row-major.
 */

import * as fs from 'fs'
import * as path from 'path'

export type Dtype = 'f32' | 'i32'

export interface TensorData {
  dtype: Dtype
  shape: number[]
  data: Float32Array | Int32Array
}

export class ContainerError extends Error {}

const MANIFEST_NAME = 'manifest.json'
const BYTES_PER_ELEMENT = 4

function product(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1)
}

function validateTensor(name: string, tensor: TensorData): void {
  if (tensor.shape.length === 0 || tensor.shape.some(s => !Number.isInteger(s) || s <= 0)) {
    throw new ContainerError(`tensor ${name}: shape must be positive integers`)
  }
  if (product(tensor.shape) !== tensor.data.length) {
    throw new ContainerError(
      `tensor ${name}: shape ${JSON.stringify(tensor.shape)} does not match ` +
      `${tensor.data.length} elements`,
    )
  }
  if (tensor.dtype === 'f32') {
    for (let i = 0; i < tensor.data.length; i++) {
      if (!Number.isFinite(tensor.data[i])) {
        throw new ContainerError(`tensor ${name}: non-finite value at index ${i}`)
      }
    }
  }
}

function encode(tensor: TensorData): Buffer {
  const buf = Buffer.alloc(tensor.data.length * BYTES_PER_ELEMENT)
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  for (let i = 0; i < tensor.data.length; i++) {
    if (tensor.dtype === 'f32') {
      view.setFloat32(i * 4, tensor.data[i], true)
    } else {
      view.setInt32(i * 4, tensor.data[i], true)
    }
  }
  return buf
}

function decode(buf: Buffer, dtype: Dtype, count: number): Float32Array | Int32Array {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  if (dtype === 'f32') {
    const out = new Float32Array(count)
    for (let i = 0; i < count; i++) out[i] = view.getFloat32(i * 4, true)
    return out
  }
  const out = new Int32Array(count)
  for (let i = 0; i < count; i++) out[i] = view.getInt32(i * 4, true)
  return out
}

/** Validates everything, then writes tensors first and the manifest last. */
export function writeContainer(dir: string, tensors: Record<string, TensorData>): void {
  const names = Object.keys(tensors).sort()
  if (names.length === 0) {
    throw new ContainerError('refusing to write an empty container')
  }
  for (const name of names) validateTensor(name, tensors[name])

  fs.mkdirSync(dir, { recursive: true })
  const entries: Record<string, { file: string; dtype: Dtype; shape: number[] }> = {}
  for (const name of names) {
    const file = `${name.toLowerCase()}.bin`
    fs.writeFileSync(path.join(dir, file), encode(tensors[name]))
    entries[name] = { file, dtype: tensors[name].dtype, shape: tensors[name].shape }
  }
  const manifest = { entries, version: 1 }
  fs.writeFileSync(path.join(dir, MANIFEST_NAME), JSON.stringify(manifest) + '\n')
}

export function readContainer(dir: string): Record<string, TensorData> {
  const manifestPath = path.join(dir, MANIFEST_NAME)
  if (!fs.existsSync(manifestPath)) {
    throw new ContainerError(`missing ${MANIFEST_NAME} in ${dir}`)
  }
  const manifest = JSON.parse(fs.readFileSync(manifestPath, 'utf-8'))
  if (manifest.version !== 1) {
    throw new ContainerError(`unsupported manifest version ${manifest.version}`)
  }
  const out: Record<string, TensorData> = {}
  for (const [name, entry] of Object.entries<any>(manifest.entries)) {
    const filePath = path.join(dir, entry.file)
    const buf = fs.readFileSync(filePath)
    const count = product(entry.shape)
    if (buf.length !== count * BYTES_PER_ELEMENT) {
      throw new ContainerError(
        `tensor ${name}: byte-length mismatch (${buf.length} vs ${count * 4})`,
      )
    }
    out[name] = { dtype: entry.dtype, shape: entry.shape, data: decode(buf, entry.dtype, count) }
  }
  return out
}
