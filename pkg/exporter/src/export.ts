/**
 * Runs a saved classifier over an image folder and writes penultimate
 * features, logits, head weights/bias, and labels (when the folder is
 * class-structured) as an oodscore tensor container.
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { TensorData, writeContainer } from './container'
import { decodePng, scanImageFolder } from './images'
import { loadZooModel, resolveHead } from './model'

export interface ExportSpec {
  model: string
  images: string
  out: string
  batchSize: number
}

export interface ExportSummary {
  numImages: number
  featureDim: number
  numClasses: number
  classNames: string[] | null
}

function inputSize(model: tf.LayersModel): { height: number; width: number } {
  const shape = model.inputs[0].shape // [null, H, W, C]
  if (shape.length !== 4 || shape[3] !== 3) {
    throw new Error(`expected an RGB image input, got shape ${JSON.stringify(shape)}`)
  }
  return { height: shape[1] as number, width: shape[2] as number }
}

function loadBatch(files: string[], height: number, width: number): tf.Tensor4D {
  const tensors = files.map(file => {
    const img = decodePng(file)
    const t = tf.tensor3d(img.pixels, [img.height, img.width, 3])
    if (img.height === height && img.width === width) {
      return t
    }
    const resized = tf.image.resizeBilinear(t, [height, width])
    t.dispose()
    return resized
  })
  const batch = tf.stack(tensors) as tf.Tensor4D
  tensors.forEach(t => t.dispose())
  return batch
}

export async function runExport(spec: ExportSpec): Promise<ExportSummary> {
  if (spec.batchSize < 1) {
    throw new Error(`batch size must be >= 1, got ${spec.batchSize}`)
  }
  const folder = scanImageFolder(spec.images) // throws before anything is written
  const model = await loadZooModel(spec.model)
  const head = resolveHead(model)
  const { height, width } = inputSize(model)

  const probe = tf.model({ inputs: model.inputs, outputs: [head.features, head.logits] })

  const n = folder.files.length
  const features = new Float32Array(n * head.featureDim)
  const logits = new Float32Array(n * head.numClasses)
  for (let start = 0; start < n; start += spec.batchSize) {
    const files = folder.files.slice(start, start + spec.batchSize)
    const batch = loadBatch(files, height, width)
    const [feats, lgts] = probe.predict(batch) as tf.Tensor[]
    features.set(await feats.data<'float32'>(), start * head.featureDim)
    logits.set(await lgts.data<'float32'>(), start * head.numClasses)
    batch.dispose()
    feats.dispose()
    lgts.dispose()
  }

  // dense kernel is [d, K]; the container stores W as [K, d]
  const W = (await head.kernel.transpose().data<'float32'>()) as Float32Array
  const bias = (await head.bias.data<'float32'>()) as Float32Array

  const tensors: Record<string, TensorData> = {
    features: { dtype: 'f32', shape: [n, head.featureDim], data: features },
    logits: { dtype: 'f32', shape: [n, head.numClasses], data: logits },
    W: { dtype: 'f32', shape: [head.numClasses, head.featureDim], data: W },
    bias: { dtype: 'f32', shape: [head.numClasses], data: bias },
  }
  if (folder.labels) {
    tensors.labels = { dtype: 'i32', shape: [n], data: folder.labels }
  }
  writeContainer(spec.out, tensors)

  const sidecar = {
    model: path.resolve(spec.model),
    input: { height, width, channels: 3, scale: '1/255' },
    featureSource: 'input of the final dense layer (post-pooling)',
    classNames: folder.classNames,
  }
  fs.writeFileSync(path.join(spec.out, 'export.json'), JSON.stringify(sidecar, null, 2) + '\n')

  return {
    numImages: n,
    featureDim: head.featureDim,
    numClasses: head.numClasses,
    classNames: folder.classNames,
  }
}
