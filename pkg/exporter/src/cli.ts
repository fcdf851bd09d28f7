#!/usr/bin/env node
/** ood-export --model <dir> --images <dir> --out <dir> [--batch N] */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { runExport } from './export'

async function main(): Promise<void> {
  const argv = await yargs(hideBin(process.argv))
    .option('model', { type: 'string', demandOption: true, describe: 'saved model directory' })
    .option('images', { type: 'string', demandOption: true, describe: 'image folder (class subdirs give labels)' })
    .option('out', { type: 'string', demandOption: true, describe: 'output container directory' })
    .option('batch', { type: 'number', default: 32, describe: 'inference batch size' })
    .strict()
    .parse()

  const summary = await runExport({
    model: argv.model,
    images: argv.images,
    out: argv.out,
    batchSize: argv.batch,
  })
  console.log(
    `exported ${summary.numImages} images: d=${summary.featureDim} ` +
    `K=${summary.numClasses}` +
    (summary.classNames ? ` classes=[${summary.classNames.join(',')}]` : ' (no labels)') +
    ` -> ${argv.out}`,
  )
}

main().catch(err => {
  console.error(`error: ${err.message ?? err}`)
  process.exit(1)
})
