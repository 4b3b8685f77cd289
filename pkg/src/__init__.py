# GlobalPaint - video outpainting with latent diffusion and global tokens
