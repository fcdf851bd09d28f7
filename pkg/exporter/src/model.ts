/**
 * Loading/saving tfjs layers models on the local filesystem, plus the
 * architecture check: the model must end in a single linear dense head so
 * its input can be exported as the penultimate feature vector.
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

export class UnsupportedArchitectureError extends Error {}

function toArrayBuffer(buf: Buffer): ArrayBuffer {
  const out = new ArrayBuffer(buf.byteLength)
  new Uint8Array(out).set(buf)
  return out
}

/** IOHandler that loads model.json + weights.bin from a directory. */
export function fileLoadHandler(dir: string): tf.io.IOHandler {
  return {
    load: async () => {
      const modelJson = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf-8'))
      const weightSpecs = modelJson.weightsManifest.flatMap((g: any) => g.weights)
      const weightData = toArrayBuffer(fs.readFileSync(path.join(dir, 'weights.bin')))
      return {
        modelTopology: modelJson.modelTopology,
        format: modelJson.format,
        generatedBy: modelJson.generatedBy,
        convertedBy: modelJson.convertedBy,
        weightSpecs,
        weightData,
      }
    },
  }
}

/** IOHandler that saves model.json + weights.bin into a directory. */
export function fileSaveHandler(dir: string): tf.io.IOHandler {
  return {
    save: async (artifacts: tf.io.ModelArtifacts) => {
      fs.mkdirSync(dir, { recursive: true })
      const data = artifacts.weightData as ArrayBuffer | ArrayBuffer[]
      const parts = Array.isArray(data) ? data : [data]
      const weightBuffer = Buffer.concat(parts.map(p => Buffer.from(p)))
      const modelJson = {
        modelTopology: artifacts.modelTopology,
        format: artifacts.format,
        generatedBy: artifacts.generatedBy,
        convertedBy: artifacts.convertedBy ?? null,
        weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
      }
      fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(modelJson))
      fs.writeFileSync(path.join(dir, 'weights.bin'), weightBuffer)
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON' as const,
        },
      }
    },
  }
}

export async function loadZooModel(modelPath: string): Promise<tf.LayersModel> {
  if (!fs.existsSync(path.join(modelPath, 'model.json'))) {
    throw new Error(`no model.json under ${modelPath}`)
  }
  return tf.loadLayersModel(fileLoadHandler(modelPath))
}

export interface HeadInfo {
  /** symbolic tensor feeding the final dense layer: the exported feature */
  features: tf.SymbolicTensor
  /** symbolic pre-activation response of the head: the exported logits */
  logits: tf.SymbolicTensor
  /** dense kernel, shape [d, K] */
  kernel: tf.Tensor2D
  /** dense bias, shape [K] */
  bias: tf.Tensor1D
  numClasses: number
  featureDim: number
}

/**
 * The supported shape is: ... -> features -> Dense(K, linear) [-> Softmax].
 * Anything else (no dense at the end, nonlinear dense activation, multiple
 * inputs to the head) is an unsupported architecture.
 */
export function resolveHead(model: tf.LayersModel): HeadInfo {
  const layers = model.layers
  let denseIndex = layers.length - 1
  const last = layers[denseIndex]
  if (last.getClassName() === 'Softmax' || last.getClassName() === 'Activation') {
    denseIndex -= 1
  }
  const dense = layers[denseIndex]
  if (denseIndex < 1 || dense.getClassName() !== 'Dense') {
    throw new UnsupportedArchitectureError(
      `model does not end in a dense head (final layer: ${last.getClassName()})`,
    )
  }
  const config = dense.getConfig() as { activation?: string }
  if (config.activation && config.activation !== 'linear') {
    throw new UnsupportedArchitectureError(
      `head dense layer must be linear, found activation '${config.activation}'`,
    )
  }
  const input = dense.input
  if (Array.isArray(input)) {
    throw new UnsupportedArchitectureError('head dense layer has multiple inputs')
  }
  if (input.shape.length !== 2) {
    throw new UnsupportedArchitectureError(
      `head input must be a flat feature vector, got shape ${JSON.stringify(input.shape)}`,
    )
  }
  const [kernel, bias] = dense.getWeights()
  if (!kernel || kernel.shape.length !== 2) {
    throw new UnsupportedArchitectureError('head dense layer has no 2-D kernel')
  }
  return {
    features: input,
    logits: dense.output as tf.SymbolicTensor,
    kernel: kernel as tf.Tensor2D,
    bias: (bias ?? tf.zeros([kernel.shape[1]])) as tf.Tensor1D,
    numClasses: kernel.shape[1],
    featureDim: kernel.shape[0],
  }
}
