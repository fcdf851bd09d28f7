/**
 * Builds the test fixtures: a deterministic folder of labeled PNG images and
 * a small CNN classifier pretrained on the same kind of images, saved under
 * fixtures/zoo/tinynet.
 *
 * Classes are colored gradient patterns with pixel noise, separable enough
 * that a few epochs reach high train accuracy on 16x16 inputs.
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { encodePng } from './images'
import { fileSaveHandler } from './model'

const SIZE = 16
const NUM_CLASSES = 3
const FIXTURE_DIR = path.join(__dirname, '..', 'fixtures')

const MASK64 = (1n << 64n) - 1n

/** splitmix64, enough determinism for pixel noise */
class Rand {
  private state: bigint
  constructor(seed: number) {
    this.state = BigInt(seed) & MASK64
  }
  next(): number {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64
    let z = this.state
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64
    z = z ^ (z >> 31n)
    return Number(z >> 11n) / 2 ** 53
  }
}

function classPattern(cls: number, rand: Rand): Uint8Array {
  const rgb = new Uint8Array(SIZE * SIZE * 3)
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const i = (y * SIZE + x) * 3
      const noise = () => (rand.next() - 0.5) * 80
      if (cls === 0) {
        // horizontal red gradient
        rgb[i] = clamp((x / SIZE) * 255 + noise())
        rgb[i + 1] = clamp(40 + noise())
        rgb[i + 2] = clamp(40 + noise())
      } else if (cls === 1) {
        // vertical green gradient
        rgb[i] = clamp(40 + noise())
        rgb[i + 1] = clamp((y / SIZE) * 255 + noise())
        rgb[i + 2] = clamp(40 + noise())
      } else {
        // diagonal blue gradient
        rgb[i] = clamp(40 + noise())
        rgb[i + 1] = clamp(40 + noise())
        rgb[i + 2] = clamp(((x + y) / (2 * SIZE)) * 255 + noise())
      }
    }
  }
  return rgb
}

function clamp(v: number): number {
  return Math.max(0, Math.min(255, Math.round(v)))
}

function patternToTensorData(rgb: Uint8Array): Float32Array {
  const out = new Float32Array(rgb.length)
  for (let i = 0; i < rgb.length; i++) out[i] = rgb[i] / 255
  return out
}

function writeImages(perClass: number): void {
  const rand = new Rand(20240811)
  for (let cls = 0; cls < NUM_CLASSES; cls++) {
    const dir = path.join(FIXTURE_DIR, 'images', `class${cls}`)
    fs.mkdirSync(dir, { recursive: true })
    for (let i = 0; i < perClass; i++) {
      const rgb = classPattern(cls, rand)
      fs.writeFileSync(
        path.join(dir, `img_${String(i).padStart(3, '0')}.png`),
        encodePng(SIZE, SIZE, rgb),
      )
    }
  }
}

function buildModel(): tf.Sequential {
  const model = tf.sequential()
  model.add(tf.layers.conv2d({
    inputShape: [SIZE, SIZE, 3], filters: 8, kernelSize: 3, activation: 'relu',
    kernelInitializer: tf.initializers.glorotUniform({ seed: 1 }),
  }))
  model.add(tf.layers.maxPooling2d({ poolSize: 2 }))
  model.add(tf.layers.conv2d({
    filters: 16, kernelSize: 3, activation: 'relu',
    kernelInitializer: tf.initializers.glorotUniform({ seed: 2 }),
  }))
  model.add(tf.layers.globalAveragePooling2d({}))
  model.add(tf.layers.dense({
    units: NUM_CLASSES, activation: 'linear',
    kernelInitializer: tf.initializers.glorotUniform({ seed: 3 }),
  }))
  return model
}

async function trainModel(): Promise<tf.Sequential> {
  const rand = new Rand(7)
  const perClass = 80
  const xs: Float32Array[] = []
  const ys: number[] = []
  for (let cls = 0; cls < NUM_CLASSES; cls++) {
    for (let i = 0; i < perClass; i++) {
      xs.push(patternToTensorData(classPattern(cls, rand)))
      ys.push(cls)
    }
  }
  const n = xs.length
  const flat = new Float32Array(n * SIZE * SIZE * 3)
  xs.forEach((x, i) => flat.set(x, i * SIZE * SIZE * 3))
  const x = tf.tensor4d(flat, [n, SIZE, SIZE, 3])
  const y = tf.oneHot(tf.tensor1d(ys, 'int32'), NUM_CLASSES)

  const model = buildModel()
  model.compile({
    optimizer: tf.train.adam(0.01),
    // the head stays linear; the loss applies softmax internally
    loss: (labels, logits) => tf.losses.softmaxCrossEntropy(labels, logits),
  })
  await model.fit(x, y, { epochs: 30, batchSize: 32, shuffle: true, verbose: 0 })

  const logits = model.predict(x) as tf.Tensor2D
  const predicted = logits.argMax(1)
  const accuracy = (await predicted.equal(tf.tensor1d(ys, 'int32')).mean().data())[0]
  console.log(`train accuracy: ${(accuracy * 100).toFixed(1)}%`)
  if (accuracy < 0.9) {
    throw new Error(`fixture model underfit (accuracy ${accuracy}); check training setup`)
  }
  x.dispose(); y.dispose(); logits.dispose(); predicted.dispose()
  return model
}

async function main(): Promise<void> {
  writeImages(12)
  console.log(`wrote ${NUM_CLASSES * 12} fixture images under fixtures/images`)
  const model = await trainModel()
  const zooDir = path.join(FIXTURE_DIR, 'zoo', 'tinynet')
  await model.save(fileSaveHandler(zooDir))
  console.log(`saved pretrained model to ${zooDir}`)
}

main().catch(err => {
  console.error(err)
  process.exit(1)
})
